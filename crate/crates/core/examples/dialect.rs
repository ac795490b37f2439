//! Runs the synthetic dialect benchmark: `dialect [steps] [d_model] [layers] [dae:bt] [seed] [pretrain 0|1] [shared-emb 0|1]`.

use canto_umt::synth::{run_benchmark, BenchmarkConfig};
use canto_umt::umt::TaskMix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize| args.get(i).map(String::as_str);
    let mut cfg = BenchmarkConfig::default();
    if let Some(s) = arg(0) {
        cfg.schedule.steps = s.parse()?;
    }
    if let Some(d) = arg(1) {
        cfg.d_model = d.parse()?;
    }
    if let Some(l) = arg(2) {
        cfg.layers = l.parse()?;
    }
    if let Some(m) = arg(3) {
        cfg.schedule.mix = m.parse::<TaskMix>()?;
    }
    if let Some(s) = arg(4) {
        cfg.seed = s.parse()?;
    }
    if let Some(p) = arg(5) {
        cfg.pretrain_embeddings = p != "0";
    }
    if let Some(p) = arg(6) {
        cfg.shared_embeddings = p != "0";
    }
    let start = std::time::Instant::now();
    let report = run_benchmark(&cfg, |r| {
        if r.step % 500 == 0 {
            eprintln!("{r}\t{:.1}s", start.elapsed().as_secs_f64());
        }
    })?;
    for (i, dir) in ["L1->L2", "L2->L1"].iter().enumerate() {
        println!(
            "{dir}\tidentity {:.2}\tmodel {:.2}",
            report.identity[i].bleu, report.model[i].bleu
        );
    }
    println!(
        "mean\tidentity {:.2}\tmodel {:.2}\tskipped {}",
        report.identity_mean(),
        report.model_mean(),
        report.bt_skipped
    );
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}

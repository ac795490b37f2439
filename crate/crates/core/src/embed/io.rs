use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use super::EmbeddingMatrix;
use crate::{Error, Result};

/// Text format: header `V d`, then `token v1 … vd` with six decimals.
pub fn export_embeddings(m: &EmbeddingMatrix) -> Result<String> {
    let mut s = format!("{} {}\n", m.len(), m.dim());
    for (i, t) in m.tokens().iter().enumerate() {
        if t.is_empty() || t.contains(char::is_whitespace) {
            return Err(Error::format(
                "embedding export",
                format!("token `{t}` has whitespace"),
            ));
        }
        s.push_str(t);
        for v in m.row(i) {
            let _ = write!(s, " {v:.6}");
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn import_embeddings(text: &str) -> Result<EmbeddingMatrix> {
    let bad = |detail: String| Error::format("embedding file", detail);
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let (v, d) = match header.split_whitespace().collect::<Vec<_>>()[..] {
        [v, d] => (
            v.parse::<usize>()
                .map_err(|_| bad(format!("bad header `{header}`")))?,
            d.parse::<usize>()
                .map_err(|_| bad(format!("bad header `{header}`")))?,
        ),
        _ => return Err(bad(format!("bad header `{header}`"))),
    };
    if v == 0 || d == 0 {
        return Err(bad(format!("header declares V={v} d={d}")));
    }
    let mut tokens = Vec::with_capacity(v);
    let mut data = Vec::with_capacity(v * d);
    for (n, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        let token = parts.next().unwrap_or_default();
        let before = data.len();
        for p in parts {
            data.push(
                p.parse::<f64>()
                    .map_err(|_| bad(format!("row {}: bad value `{p}`", n + 1)))?,
            );
        }
        if data.len() - before != d {
            return Err(bad(format!(
                "row {} has {} values, header says {d}",
                n + 1,
                data.len() - before
            )));
        }
        tokens.push(token.to_string());
    }
    if tokens.len() != v {
        return Err(bad(format!("{} rows, header says {v}", tokens.len())));
    }
    let vectors = Array2::from_shape_vec((v, d), data).expect("sizes checked");
    EmbeddingMatrix::new(tokens, vec![0; v], vectors)
}

pub fn write_embeddings(path: &Path, m: &EmbeddingMatrix) -> Result<()> {
    std::fs::write(path, export_embeddings(m)?).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    import_embeddings(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_errors() {
        assert!(import_embeddings("0 3\n").is_err());
        assert!(import_embeddings("1 3\na 1 2\n").is_err());
        assert!(import_embeddings("2 2\na 1 2\n").is_err());
        assert!(import_embeddings("x\n").is_err());
        assert!(import_embeddings("1 2\na 1 b\n").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_at_six_decimals(values in proptest::collection::vec(-1e3f64..1e3, 6)) {
            let m = EmbeddingMatrix::new(
                vec!["好".into(), "<UNK>".into()],
                vec![0, 0],
                Array2::from_shape_vec((2, 3), values.clone()).unwrap(),
            ).unwrap();
            let text = export_embeddings(&m).unwrap();
            let back = import_embeddings(&text).unwrap();
            prop_assert_eq!(export_embeddings(&back).unwrap(), text);
            for (a, b) in back.vectors().iter().zip(&values) {
                prop_assert!((a - b).abs() <= 5e-7);
            }
        }
    }
}

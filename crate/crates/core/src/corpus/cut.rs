use super::{RawDocument, Sentence};

/// Sentence-final punctuation. `.` only cuts when followed by whitespace or
/// end of text, so decimals and domain names survive.
const CUT_MARKS: [char; 7] = ['。', '．', '.', '!', '！', '?', '？'];

fn is_cut_mark(c: char) -> bool {
    CUT_MARKS.contains(&c)
}

/// Split a document into sentences. Cut punctuation stays attached to the end
/// of the sentence it terminates; a run like `!!` or `？！` is kept together.
pub fn cut_sentences(doc: &RawDocument) -> Vec<Sentence> {
    cut_text(&doc.text)
        .into_iter()
        .map(|t| Sentence::new(t, doc.source_id.clone()))
        .collect()
}

/// Same as [`cut_sentences`] over bare text.
pub fn cut_text(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' || c == '\r' {
            flush(&mut cur, &mut out);
            i += 1;
        } else if is_cut_mark(c) {
            let start = i;
            while i < chars.len() && is_cut_mark(chars[i]) {
                i += 1;
            }
            let run = &chars[start..i];
            cur.extend(run);
            let terminal =
                run.iter().any(|&m| m != '.') || i == chars.len() || chars[i].is_whitespace();
            if terminal {
                flush(&mut cur, &mut out);
            }
        } else {
            cur.push(c);
            i += 1;
        }
    }
    flush(&mut cur, &mut out);
    out
}

fn flush(cur: &mut String, out: &mut Vec<String>) {
    let t = cur.trim();
    if !t.is_empty() {
        out.push(t.to_string());
    }
    cur.clear();
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cut(s: &str) -> Vec<String> {
        cut_text(s)
    }

    #[test]
    fn cuts_on_full_stop() {
        assert_eq!(cut("你好。我係學生。"), vec!["你好。", "我係學生。"]);
    }

    #[test]
    fn empty_input() {
        assert!(cut("").is_empty());
        assert!(cut("  \n \n").is_empty());
    }

    #[test]
    fn newline_is_a_cut_point() {
        assert_eq!(cut("天氣好\n出去玩"), vec!["天氣好", "出去玩"]);
        assert_eq!(cut("天氣好\r\n出去玩"), vec!["天氣好", "出去玩"]);
    }

    #[test]
    fn half_width_period_needs_trailing_space() {
        assert_eq!(cut("圓周率係3.14。"), vec!["圓周率係3.14。"]);
        assert_eq!(cut("see www.a.com ok"), vec!["see www.a.com ok"]);
        assert_eq!(cut("Hi. 你好"), vec!["Hi.", "你好"]);
        assert_eq!(cut("完."), vec!["完."]);
    }

    #[test]
    fn punctuation_runs_stay_together() {
        assert_eq!(cut("真係？！好啦!!"), vec!["真係？！", "好啦!!"]);
        assert_eq!(cut("咁...我走先"), vec!["咁...我走先"]);
        assert_eq!(cut("咁... 我走先"), vec!["咁...", "我走先"]);
    }

    #[test]
    fn keeps_source_id() {
        let doc = RawDocument::new("a:1", "一。二！");
        let s = cut_sentences(&doc);
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|x| x.source_id == "a:1" && x.label.is_none()));
    }

    fn strip_ws(s: &str) -> String {
        s.chars().filter(|c| !c.is_whitespace()).collect()
    }

    proptest! {
        #[test]
        fn concatenation_reproduces_text(s in "[你好我a-c .。!？\n 0-9]{0,40}") {
            let parts = cut(&s);
            prop_assert_eq!(strip_ws(&parts.concat()), strip_ws(&s));
            for p in &parts {
                prop_assert!(!p.trim().is_empty());
                // cut marks only in the trailing run (or a `.` not followed by space)
                let chars: Vec<char> = p.chars().collect();
                let body_end = chars.iter().rposition(|c| !is_cut_mark(*c)).map_or(0, |i| i + 1);
                prop_assert!(chars[..body_end].iter().all(|c| !is_cut_mark(*c) || *c == '.'), "{:?}", p);
            }
        }

        #[test]
        fn cutting_is_idempotent(s in "[你好我a-c .。!？\n]{0,40}") {
            let once = cut(&s);
            let twice: Vec<String> = once.iter().flat_map(|p| cut(p)).collect();
            prop_assert_eq!(once, twice);
        }
    }
}

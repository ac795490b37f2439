use super::{LanguageLabel, Sentence};

const CANTONESE_MARKERS: [char; 26] = [
    '咗', '唔', '係', '喺', '啦', '嘅', '既', '咁', '佢', '哋', '冇', '仲', '嘢', '乜', '噉', '咪',
    '咩', '俾', '呢', '嚟', '黎', '啫', '喂', '喇', '喎', '睇',
];

const MANDARIN_MARKERS: [char; 10] = ['是', '的', '他', '她', '沒', '也', '看', '說', '在', '说'];

/// Majority vote over marker characters; a tie (including 0–0) is ambiguous.
pub fn classify_language(s: &Sentence) -> LanguageLabel {
    classify_text(&s.text)
}

pub(crate) fn classify_text(text: &str) -> LanguageLabel {
    let (mut can, mut man) = (0usize, 0usize);
    for c in text.chars() {
        if CANTONESE_MARKERS.contains(&c) {
            can += 1;
        } else if MANDARIN_MARKERS.contains(&c) {
            man += 1;
        }
    }
    match can.cmp(&man) {
        std::cmp::Ordering::Greater => LanguageLabel::Cantonese,
        std::cmp::Ordering::Less => LanguageLabel::Mandarin,
        std::cmp::Ordering::Equal => LanguageLabel::Ambiguous,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterDecision {
    Keep,
    Drop,
}

/// True for code points in the CJK Unified Ideographs blocks (base block and
/// extensions A through H). Compatibility ideographs are excluded.
pub fn is_cjk_ideograph(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF
        | 0x3400..=0x4DBF
        | 0x20000..=0x2A6DF
        | 0x2A700..=0x2B73F
        | 0x2B740..=0x2B81F
        | 0x2B820..=0x2CEAF
        | 0x2CEB0..=0x2EBEF
        | 0x30000..=0x3134F
        | 0x31350..=0x323AF)
}

/// Drop a sentence when CJK ideographs make up less than 5% of its code points.
pub fn foreign_filter(s: &Sentence) -> FilterDecision {
    foreign_filter_text(&s.text)
}

pub(crate) fn foreign_filter_text(text: &str) -> FilterDecision {
    let (mut cjk, mut total) = (0usize, 0usize);
    for c in text.chars() {
        total += 1;
        if is_cjk_ideograph(c) {
            cjk += 1;
        }
    }
    // cjk / total >= 0.05, in integers
    if total > 0 && cjk * 20 >= total {
        FilterDecision::Keep
    } else {
        FilterDecision::Drop
    }
}

use std::sync::LazyLock;

use regex::Regex;

use super::Sentence;

static URL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(?:(?-u:\b)[a-z][a-z0-9+.\-]*://|(?-u:\b)www\.)[!-~]+").unwrap()
});

static HASHTAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[#＃][^\s#＃]+").unwrap());

// Property-based emoji membership: pictographs, skin-tone modifiers, flags,
// variation selectors, joiners and the keycap combiner.
static EMOJI: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"[\p{Extended_Pictographic}\p{Emoji_Modifier}\p{Regional_Indicator}\x{FE0E}\x{FE0F}\x{200D}\x{20E3}]",
    )
    .unwrap()
});

static SPACES: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s+").unwrap());

/// Remove URLs, hashtags and emoji, then collapse whitespace. The result may
/// be empty; callers drop such sentences.
pub fn strip_noise(s: &Sentence) -> Sentence {
    Sentence {
        text: strip_noise_text(&s.text),
        source_id: s.source_id.clone(),
        label: s.label,
    }
}

pub(crate) fn strip_noise_text(text: &str) -> String {
    let t = URL.replace_all(text, " ");
    let t = HASHTAG.replace_all(&t, " ");
    let t = EMOJI.replace_all(&t, "");
    SPACES.replace_all(&t, " ").trim().to_string()
}

//! Seeded generator of English-like prose, for tests and demos that need a
//! corpus without shipping one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NAMES: &[&str] = &[
    "Anna", "Tom", "Mira", "Jonas", "Elin", "Oskar", "Lena", "Victor", "Sara", "Hugo", "Ida",
    "Felix", "Nora", "Axel", "Maja", "Leo",
];
const NOUNS: &[&str] = &[
    "house", "river", "garden", "city", "forest", "letter", "window", "road", "door", "ship",
    "market", "village", "mountain", "book", "table", "horse", "bridge", "tower", "lamp", "field",
    "station", "kitchen", "island", "storm", "king", "teacher", "doctor", "soldier", "child",
    "friend", "stranger", "captain", "painter", "farmer", "night", "morning", "winter", "music",
    "story", "map", "coin", "key", "bottle", "ring", "song", "boat", "train", "dog", "cat", "bird",
];
const ADJECTIVES: &[&str] = &[
    "old", "quiet", "dark", "small", "bright", "cold", "warm", "strange", "empty", "green",
    "heavy", "narrow", "broken", "gentle", "silver", "distant", "hidden", "tired", "young",
    "proud", "wild", "careful",
];
const VERBS_T: &[&str] = &[
    "found", "opened", "watched", "carried", "painted", "followed", "remembered", "built",
    "lost", "crossed", "visited", "closed", "sold", "read", "wrote", "cleaned", "noticed",
    "repaired", "left", "held",
];
const VERBS_I: &[&str] = &[
    "waited", "smiled", "slept", "laughed", "walked", "listened", "worked", "returned",
    "disappeared", "stayed", "sang", "whispered", "hesitated", "arrived",
];
const ADVERBS: &[&str] = &[
    "slowly", "quietly", "again", "suddenly", "carefully", "alone", "together", "at last",
    "for a while", "without a word",
];
const PREPS: &[&str] = &["near", "behind", "under", "beside", "across", "inside", "above", "beyond"];
const TIMES: &[&str] = &[
    "In the morning", "That night", "Later", "After the storm", "Before dawn", "On Sunday",
    "Years ago", "At noon", "When winter came", "Some days later",
];
const SAYINGS: &[&str] = &[
    "we should go home", "the door is open", "nobody knows the way", "it will rain soon",
    "the ship has left", "I have seen this before", "you must be tired", "listen to the river",
];

/// Zipf-like pick: earlier entries are proportionally more frequent.
fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
    let total: f64 = (1..=words.len()).map(|r| 1.0 / r as f64).sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in words.iter().enumerate() {
        u -= 1.0 / (i + 1) as f64;
        if u <= 0.0 {
            return w;
        }
    }
    words[words.len() - 1]
}

fn noun_phrase(rng: &mut ChaCha8Rng) -> String {
    if rng.random_bool(0.15) {
        return pick(rng, NAMES).to_string();
    }
    let det = if rng.random_bool(0.7) { "the" } else { "a" };
    let noun = pick(rng, NOUNS);
    let det = if det == "a" && noun.starts_with(['a', 'e', 'i', 'o', 'u']) { "an" } else { det };
    if rng.random_bool(0.4) {
        let adj = pick(rng, ADJECTIVES);
        let det = if det != "the" && adj.starts_with(['a', 'e', 'i', 'o', 'u']) { "an" } else if det != "the" { "a" } else { det };
        format!("{det} {adj} {noun}")
    } else {
        format!("{det} {noun}")
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let subject = noun_phrase(rng);
    let body = match rng.random_range(0..6) {
        0 => format!("{subject} {} {}", pick(rng, VERBS_T), noun_phrase(rng)),
        1 => format!("{subject} {} {}", pick(rng, VERBS_I), pick(rng, ADVERBS)),
        2 => format!(
            "{subject} {} {} {} {}",
            pick(rng, VERBS_T),
            noun_phrase(rng),
            pick(rng, PREPS),
            noun_phrase(rng)
        ),
        3 => format!("{}, {subject} {}", pick(rng, TIMES), pick(rng, VERBS_I)),
        4 => format!("\"{}\", said {}", capitalize(pick(rng, SAYINGS)), pick(rng, NAMES)),
        _ => format!(
            "{subject} {} {} and {} {}",
            pick(rng, VERBS_T),
            noun_phrase(rng),
            pick(rng, VERBS_I),
            pick(rng, ADVERBS)
        ),
    };
    let end = if rng.random_bool(0.08) { "?" } else { "." };
    format!("{}{end}", capitalize(&body))
}

/// Generates roughly `target_bytes` of text, paragraph separated.
pub fn prose(seed: u64, target_bytes: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::with_capacity(target_bytes + 256);
    while out.len() < target_bytes {
        let sentences = rng.random_range(3..8);
        for i in 0..sentences {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&sentence(&mut rng));
        }
        out.push('\n');
    }
    out
}

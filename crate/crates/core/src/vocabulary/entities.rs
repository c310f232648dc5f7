//! Lexicon-driven noun extraction for short image captions.
//!
//! Captions produced by image captioners are short declarative phrases
//! ("a man riding a horse on a beach"), so a closed-class lexicon plus suffix
//! rules tags them well enough: every token that is not a determiner, number,
//! preposition, conjunction, pronoun, auxiliary, adverb, adjective or verb is
//! taken as a noun and lemmatized to its singular form.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tag {
    Det,
    Num,
    Adp,
    Conj,
    Pron,
    Aux,
    Adv,
    Adj,
    Verb,
    Noun,
}

/// Ordered, duplicate-free lemmatized nouns from one caption.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityList {
    pub keywords: Vec<String>,
    pub source_caption: String,
}

impl EntityList {
    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }

    pub fn len(&self) -> usize {
        self.keywords.len()
    }
}

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "some", "any", "each", "every", "its",
    "his", "her", "their", "our", "my", "your", "another", "other", "several", "many", "few",
    "no", "both", "all", "lots", "bunch", "couple", "pair", "group",
];

const NUMBERS: &[&str] = &[
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
    "twelve", "dozen", "dozens", "hundred", "hundreds", "first", "second", "third", "single",
];

const ADPOSITIONS: &[&str] = &[
    "on", "in", "at", "of", "with", "by", "near", "next", "to", "from", "under", "over", "above",
    "below", "behind", "beside", "besides", "between", "into", "onto", "through", "across",
    "along", "around", "against", "inside", "outside", "up", "down", "off", "for", "during",
    "toward", "towards", "atop", "beneath", "underneath", "among", "amongst", "like", "about",
    "out", "upon", "within", "without", "past", "via",
];

const CONJUNCTIONS: &[&str] = &[
    "and", "or", "but", "while", "as", "than", "which", "who", "whom", "whose", "where", "when",
    "if", "so", "because", "nor", "yet",
];

const PRONOUNS: &[&str] = &[
    "it", "they", "he", "she", "them", "him", "we", "us", "you", "i", "me", "someone",
    "something", "somebody", "anyone", "anything", "everyone", "everything", "nothing", "there",
    "here", "itself", "themselves", "himself", "herself", "one's",
];

const AUXILIARIES: &[&str] = &[
    "is", "are", "was", "were", "be", "being", "been", "am", "has", "have", "had", "does", "do",
    "did", "can", "could", "will", "would", "shall", "should", "may", "might", "must", "not",
];

const ADVERBS: &[&str] = &[
    "very", "together", "close", "away", "back", "just", "also", "too", "still", "really",
    "almost", "very", "quite", "then", "now", "again", "well", "far", "nearby", "very",
    "outdoors", "indoors", "upside", "alongside", "forward", "ahead", "apart", "around",
];

const ADJECTIVES: &[&str] = &[
    // colours
    "red", "blue", "green", "yellow", "white", "black", "brown", "gray", "grey", "orange",
    "pink", "purple", "silver", "golden", "gold", "dark", "light", "bright", "colorful",
    "colourful", "multicolored", "tan", "beige",
    // size, age, shape
    "small", "large", "big", "little", "tiny", "huge", "giant", "tall", "short", "long", "young",
    "old", "new", "wide", "narrow", "thin", "thick", "round", "square", "high", "low", "fat",
    // texture, state, other common caption modifiers
    "wooden", "metal", "plastic", "glass", "empty", "open", "closed", "busy", "wet", "dry", "full",
    "cute", "fluffy", "furry", "sunny", "snowy", "grassy", "sandy", "rocky", "clear", "cloudy",
    "different", "various", "double", "striped", "spotted", "fresh", "clean", "dirty", "pretty",
    "beautiful", "nice", "good", "happy", "adorable", "lush", "calm", "modern", "vintage",
    "antique", "electric", "commercial", "passenger", "domestic", "wild", "baby", "adult",
    "same", "other", "only", "top", "front", "side", "middle", "large", "own", "half",
    "asian", "american", "crowded", "dense", "shallow", "deep", "hot", "cold", "warm",
    "asleep", "awake", "alone", "alive", "afloat", "aloft",
];

const VERBS: &[&str] = &[
    "sit", "sits", "stand", "stands", "look", "looks", "hold", "holds", "ride", "rides", "fly",
    "flies", "eat", "eats", "lie", "lies", "lay", "lays", "play", "plays", "walk", "walks", "run",
    "runs", "graze", "grazes", "rest", "rests", "wait", "waits", "swim", "swims", "drive",
    "drives", "carry", "carries", "wear", "wears", "watch", "watches", "sleep", "sleeps", "pose",
    "poses", "hang", "hangs", "float", "floats", "park", "go", "goes", "take", "takes", "make",
    "makes", "fill", "filled", "show", "shows", "contain", "contains", "perch", "perches",
    "cross", "crosses", "jump", "jumps", "kick", "kicks", "throw", "throws", "catch", "catches",
    "hit", "hits", "seen", "sat", "stood", "held", "ridden", "flown", "taken", "shown", "made",
    "lain", "left", "built", "set", "covered", "topped", "stacked", "lined", "surrounded",
];

/// Tokens ending in `-ing`/`-ed` that are nonetheless nouns.
const NOUN_EXCEPTIONS: &[&str] = &[
    "building", "buildings", "ceiling", "painting", "paintings", "clothing", "ring", "rings",
    "king", "wing", "wings", "thing", "things", "string", "spring", "evening", "morning",
    "railing", "awning", "bed", "beds", "shed", "sled", "sleds", "sibling", "siblings",
    "pudding", "stuffing", "frosting", "icing", "sidewalk", "railroad", "crossing", "landing",
    "living", "dining", "parking", "swing", "sing", "sling", "duckling", "seedling",
];

const IRREGULAR_PLURALS: &[(&str, &str)] = &[
    ("men", "man"),
    ("women", "woman"),
    ("people", "person"),
    ("persons", "person"),
    ("children", "child"),
    ("feet", "foot"),
    ("teeth", "tooth"),
    ("mice", "mouse"),
    ("geese", "goose"),
    ("oxen", "ox"),
    ("dice", "die"),
    ("knives", "knife"),
    ("wives", "wife"),
    ("lives", "life"),
    ("leaves", "leaf"),
    ("loaves", "loaf"),
    ("shelves", "shelf"),
    ("wolves", "wolf"),
    ("calves", "calf"),
    ("halves", "half"),
    ("scarves", "scarf"),
    ("buses", "bus"),
    ("gases", "gas"),
    ("cacti", "cactus"),
    ("fungi", "fungus"),
    ("movies", "movie"),
    ("cookies", "cookie"),
    ("pies", "pie"),
    ("ties", "tie"),
    ("shoes", "shoe"),
    ("toes", "toe"),
    ("hoes", "hoe"),
    ("canoes", "canoe"),
    ("horses", "horse"),
    ("houses", "house"),
    ("vases", "vase"),
    ("cases", "case"),
    ("bases", "base"),
    ("glasses", "glass"),
    ("cheeses", "cheese"),
    ("bridges", "bridge"),
    ("sandwiches", "sandwich"),
];

/// Words whose plural and singular coincide, or which end in `s` when singular.
const INVARIANT: &[&str] = &[
    "sheep", "deer", "fish", "series", "species", "aircraft", "glass", "grass", "bus", "gas",
    "class", "dress", "cross", "bass", "moss", "chess", "lens", "news", "tennis", "pants",
    "jeans", "scissors", "glasses", "shorts", "clothes", "bus", "cactus", "octopus", "walrus",
    "hippopotamus", "asparagus", "canvas", "bias", "plus", "campus", "bonus", "chorus", "status",
    "iris", "analysis", "axis", "basis", "oasis", "this", "chassis", "species", "mattress",
];

fn contains(list: &[&str], w: &str) -> bool {
    list.contains(&w)
}

/// Tags one lowercased token in isolation.
pub fn tag_token(word: &str) -> Tag {
    if contains(DETERMINERS, word) {
        Tag::Det
    } else if contains(NUMBERS, word) || word.chars().all(|c| c.is_ascii_digit()) {
        Tag::Num
    } else if contains(ADPOSITIONS, word) {
        Tag::Adp
    } else if contains(CONJUNCTIONS, word) {
        Tag::Conj
    } else if contains(PRONOUNS, word) {
        Tag::Pron
    } else if contains(AUXILIARIES, word) {
        Tag::Aux
    } else if contains(NOUN_EXCEPTIONS, word) {
        Tag::Noun
    } else if contains(ADVERBS, word) || (word.len() > 4 && word.ends_with("ly")) {
        Tag::Adv
    } else if contains(ADJECTIVES, word) {
        Tag::Adj
    } else if contains(VERBS, word)
        || (word.len() > 4 && word.ends_with("ing"))
        || (word.len() > 3 && word.ends_with("ed"))
    {
        Tag::Verb
    } else {
        Tag::Noun
    }
}

/// Singular form of a lowercase English noun.
pub fn lemmatize(word: &str) -> String {
    if let Some((_, s)) = IRREGULAR_PLURALS.iter().find(|(p, _)| *p == word) {
        return s.to_string();
    }
    if contains(INVARIANT, word) || word.len() <= 3 {
        return word.to_string();
    }
    if let Some(stem) = word.strip_suffix("ies") {
        return format!("{stem}y");
    }
    if let Some(stem) = word.strip_suffix("ves") {
        return format!("{stem}f");
    }
    for suffix in ["ches", "shes", "sses", "xes", "zzes", "oes"] {
        if word.ends_with(suffix) {
            return word[..word.len() - 2].to_string();
        }
    }
    if word.ends_with("ss") || word.ends_with("us") || word.ends_with("is") {
        return word.to_string();
    }
    match word.strip_suffix('s') {
        Some(stem) => stem.to_string(),
        None => word.to_string(),
    }
}

fn tokenize(caption: &str) -> impl Iterator<Item = String> + '_ {
    caption
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|t| !t.is_empty())
        .map(|t| {
            let t = t.trim_matches('\'');
            let t = t.strip_suffix("'s").unwrap_or(t);
            t.to_lowercase()
        })
}

/// Extracts nouns from `caption`, lemmatized to singular, deduplicated in
/// order of first occurrence.
pub fn extract_entities(caption: &str) -> EntityList {
    let mut seen = HashSet::new();
    let mut keywords = Vec::new();
    for token in tokenize(caption) {
        if token.len() < 2 || !token.chars().all(|c| c.is_ascii_alphabetic()) {
            continue;
        }
        if tag_token(&token) != Tag::Noun {
            continue;
        }
        let lemma = lemmatize(&token);
        if seen.insert(lemma.clone()) {
            keywords.push(lemma);
        }
    }
    EntityList {
        keywords,
        source_caption: caption.to_string(),
    }
}

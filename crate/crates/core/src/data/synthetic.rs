//! Seeded templated intent corpus for desk-scale experiments.
//!
//! Five in-distribution intents are rendered from slot templates. Unknown
//! intents come from held-out templates that mostly reuse the in-distribution
//! carrier phrases ("how much did i ... this week") with words that never
//! occur in training, which is the hard case for classifier-based detectors.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{tokenize, DatasetSplits, LabelSet, LabeledUtterance, Utterance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub train: usize,
    pub validation: usize,
    pub test_ind: usize,
    pub test_ood: usize,
    /// Size of the unlabeled general-domain corpus for the built-in LMs.
    pub general: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig { train: 2000, validation: 500, test_ind: 500, test_ood: 200, general: 4000, seed: 7 }
    }
}

struct Intent {
    name: &'static str,
    templates: &'static [&'static str],
}

const INTENTS: [Intent; 5] = [
    Intent {
        name: "alarm",
        templates: &[
            "set an alarm for {clock}",
            "wake me up at {clock} {time}",
            "cancel my alarm for {clock}",
            "can you set an alarm {time}",
            "turn off the alarm please",
            "change my alarm to {clock}",
        ],
    },
    Intent {
        name: "music",
        templates: &[
            "play some {genre} music",
            "put on {genre} songs please",
            "i want to hear {artist}",
            "can you play {artist} {time}",
            "skip this song",
            "play the new album by {artist}",
        ],
    },
    Intent {
        name: "reminder",
        templates: &[
            "remind me to {task} {time}",
            "what's on my reminder list",
            "add {task} to my reminder list",
            "can you remind me to {task}",
            "tell me my reminders for {time}",
            "delete the reminder to {task}",
        ],
    },
    Intent {
        name: "spending",
        templates: &[
            "how much did i spend {time}",
            "how much money did i spend on {category} {time}",
            "what did i spend on {category} {time}",
            "show me my spending on {category}",
            "tell me how much i spent {time}",
            "how much have i spent on {category}",
        ],
    },
    Intent {
        name: "weather",
        templates: &[
            "what is the weather {time} in {city}",
            "will it rain {time} in {city}",
            "is it going to be sunny {time}",
            "tell me the forecast for {city}",
            "how cold will it be {time}",
            "what is the weather like in {city}",
        ],
    },
];

const OOD_TEMPLATES: &[&str] = &[
    "how much did i sleep {time}",
    "how much water did i drink {time}",
    "how much did i run {time}",
    "what is the traffic {time} in {city}",
    "what is the population of {city}",
    "set a timer for {clock}",
    "book a table for {clock} {time}",
    "can you translate {word} to spanish",
    "tell me a joke about {category}",
    "what's on my shopping list",
    "add {task} to my calendar",
    "play a game with me {time}",
    "i want to order a pizza",
    "what is the capital of {city}",
    "how many steps did i walk {time}",
];

/// Unlabeled everyday requests standing in for the broad text a pretrained
/// LM has seen. They share carrier phrases and slot values with the intents
/// and introduce vocabulary that the labeled splits never use.
const GENERAL_TEMPLATES: &[&str] = &[
    "how much did i {activity} {time}",
    "how long did i {activity} {time}",
    "i want to {activity} {time}",
    "remind me how much i {activity}",
    "what is the {topic} {time} in {city}",
    "what is the {topic} like in {city}",
    "tell me about the {topic} in {city}",
    "set a {thing} for {clock}",
    "book a {thing} for {clock} {time}",
    "can you find a {thing} {time}",
    "add {task} to my {list}",
    "what's on my {list}",
    "show me my {list} for {time}",
    "can you {verb} {word} to {language}",
    "tell me a {story} about {category}",
    "play a {game} with me {time}",
    "i want to order {food}",
    "how do i make {food}",
    "how many {unit} did i {activity} {time}",
    "is it a good day to {activity} in {city}",
];

fn slot(name: &str) -> &'static [&'static str] {
    match name {
        "time" => &["today", "this week", "last month", "yesterday", "tomorrow", "tonight", "this weekend", "next week"],
        "city" => &["paris", "london", "tokyo", "boston", "denver", "seattle"],
        "clock" => &["7 am", "6 30", "noon", "8 pm", "midnight", "5 am"],
        "genre" => &["jazz", "rock", "pop", "classical", "country", "blues"],
        "artist" => &["taylor swift", "the beatles", "miles davis", "adele", "drake"],
        "task" => &["buy milk", "call mom", "pay rent", "water the plants", "walk the dog", "pick up laundry"],
        "category" => &["groceries", "gas", "restaurants", "clothes", "coffee", "travel"],
        "word" => &["hello", "goodbye", "thank you", "good night"],
        "activity" => &["sleep", "drink", "run", "walk", "swim", "read", "study", "eat", "cook", "work"],
        "topic" => &["traffic", "population", "news", "capital", "history", "score", "election"],
        "thing" => &["timer", "table", "taxi", "meeting", "flight", "hotel"],
        "list" => &["calendar", "shopping list", "notes", "to do list", "agenda"],
        "verb" => &["translate", "spell", "say", "define"],
        "language" => &["spanish", "french", "german", "italian"],
        "story" => &["joke", "story", "fact", "riddle", "poem"],
        "game" => &["game", "quiz", "trivia round", "puzzle"],
        "food" => &["a pizza", "sushi", "pasta", "a burger", "soup", "tacos"],
        "unit" => &["steps", "miles", "hours", "glasses", "pages", "calories"],
        other => panic!("unknown slot {other}"),
    }
}

fn render(template: &str, rng: &mut impl Rng) -> Utterance {
    let mut out = String::new();
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let end = rest[start..].find('}').expect("closed slot") + start;
        out.push_str(slot(&rest[start + 1..end]).choose(rng).expect("nonempty slot"));
        rest = &rest[end + 1..];
    }
    out.push_str(rest);
    tokenize(&out).expect("templates are nonempty")
}

/// Generates the synthetic splits. Intents are balanced in every labeled split.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> DatasetSplits {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labels = LabelSet::new(INTENTS.iter().map(|i| i.name.to_string()));
    let labeled = |n: usize, rng: &mut ChaCha8Rng| -> Vec<LabeledUtterance> {
        (0..n)
            .map(|i| {
                let intent = &INTENTS[i % INTENTS.len()];
                let template = intent.templates.choose(rng).unwrap();
                LabeledUtterance::new(render(template, rng), labels.by_name(intent.name).unwrap())
            })
            .collect()
    };
    let train = labeled(cfg.train, &mut rng);
    let validation = labeled(cfg.validation, &mut rng);
    let test_ind = labeled(cfg.test_ind, &mut rng);
    let test_ood = (0..cfg.test_ood).map(|_| render(OOD_TEMPLATES.choose(&mut rng).unwrap(), &mut rng)).collect();
    DatasetSplits { labels: labels.clone(), train, validation, test_ind, test_ood }
}

/// Unlabeled general-domain corpus of `cfg.general` utterances, seeded
/// independently of the labeled splits.
pub fn synthetic_general_corpus(cfg: &SyntheticConfig) -> Vec<Utterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5bd1_e995);
    (0..cfg.general).map(|_| render(GENERAL_TEMPLATES.choose(&mut rng).unwrap(), &mut rng)).collect()
}

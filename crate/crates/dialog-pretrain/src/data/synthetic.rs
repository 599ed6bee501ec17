//! Seeded synthetic corpus generator.
//!
//! Dialogs follow scripted domain scenarios in which every system reply is a
//! deterministic function of the values the user mentioned, so retrieval,
//! generation, and corruption-detection objectives all have learnable
//! structure. Output uses the standard corpus JSON format and validates
//! against the built-in belief schema and act inventory.

use super::schema::BeliefSchema;
use super::{tokenize, Corpus, Dialog, Speaker, Turn};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            train: 200,
            valid: 40,
            test: 40,
            seed: 0,
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Corpus {
    let schema = BeliefSchema::multiwoz();
    let gen = |split: &str, n: usize| -> Vec<Dialog> {
        (0..n)
            .map(|i| {
                let mut rng = crate::rng::stream(spec.seed, &format!("synthetic-{split}"), i as u64);
                build_dialog(&format!("syn-{split}-{i:05}"), &mut rng, &schema)
            })
            .collect()
    };
    Corpus {
        train: gen("train", spec.train),
        valid: gen("valid", spec.valid),
        test: gen("test", spec.test),
    }
}

const DOMAINS: [&str; 5] = ["restaurant", "hotel", "attraction", "train", "taxi"];

const FOODS: [&str; 4] = ["italian", "chinese", "indian", "british"];
const AREAS: [&str; 5] = ["centre", "north", "south", "east", "west"];
const PRICES: [&str; 3] = ["cheap", "moderate", "expensive"];
const ATTRACTIONS: [&str; 4] = ["museum", "college", "park", "cinema"];
const PLACES: [&str; 4] = [
    "cambridge station",
    "city centre",
    "the airport",
    "kings college",
];
const DAYS: [&str; 4] = ["monday", "tuesday", "friday", "sunday"];
const PEOPLE: [&str; 3] = ["2", "4", "6"];
const NAMES: [&str; 8] = [
    "the golden wok",
    "the blue boar",
    "the river house",
    "the old mill",
    "the copper kettle",
    "the lazy otter",
    "the royal oak",
    "the iron duke",
];
const REFS: [&str; 6] = ["ax7c", "bq2d", "cr9f", "dk4m", "ew1p", "fz6t"];
const TRAIN_TIMES: [&str; 4] = ["07:00", "07:30", "08:00", "08:30"];
const MINUTES: [&str; 4] = ["45", "60", "75", "90"];
const FEES: [&str; 3] = ["2", "4", "5"];
const CARS: [&str; 4] = ["white skoda", "grey bmw", "black audi", "red ford"];
const PHONES: [&str; 4] = ["555101", "555202", "555303", "555404"];

fn mix(h: u64, s: &str) -> u64 {
    let mut h = h ^ 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

fn pick<'a>(items: &'a [&str], h: u64) -> &'a str {
    items[(h % items.len() as u64) as usize]
}

struct DialogBuilder {
    turns: Vec<Turn>,
    belief: BTreeMap<String, String>,
}

impl DialogBuilder {
    fn new() -> Self {
        DialogBuilder {
            turns: Vec::new(),
            belief: BTreeMap::new(),
        }
    }

    fn user(&mut self, text: &str, updates: &[(String, String)]) {
        for (k, v) in updates {
            self.belief.insert(k.clone(), v.clone());
        }
        self.turns.push(Turn {
            speaker: Speaker::User,
            tokens: tokenize(text),
            belief: Some(self.belief.clone()),
            acts: None,
        });
    }

    fn system(&mut self, text: &str, acts: &[&str]) {
        self.turns.push(Turn {
            speaker: Speaker::System,
            tokens: tokenize(text),
            belief: None,
            acts: Some(acts.iter().map(|a| a.to_string()).collect()),
        });
    }
}

fn build_dialog(id: &str, rng: &mut ChaCha20Rng, schema: &BeliefSchema) -> Dialog {
    let domain = DOMAINS[rng.gen_range(0..DOMAINS.len())];
    let mut b = DialogBuilder::new();
    let slot = |s: &str| format!("{domain}-{s}");

    // Opening exchange: the system answer is a pure function of the values.
    let opener = ["i am looking for", "i need", "can you find me"][rng.gen_range(0..3)];
    let mut h;
    match domain {
        "restaurant" => {
            let food = pick(&FOODS, rng.gen());
            let area = pick(&AREAS, rng.gen());
            h = mix(mix(0, food), area);
            let name = pick(&NAMES, h);
            b.user(
                &format!("{opener} a {food} restaurant in the {area}"),
                &[(slot("food"), food.into()), (slot("area"), area.into())],
            );
            b.system(
                &format!("{name} serves {food} food in the {area} . shall i book it ?"),
                &["Restaurant-Recommend"],
            );
        }
        "hotel" => {
            let price = pick(&PRICES, rng.gen());
            let area = pick(&AREAS, rng.gen());
            h = mix(mix(1, price), area);
            let name = pick(&NAMES, h);
            b.user(
                &format!("{opener} a {price} hotel in the {area}"),
                &[
                    (slot("pricerange"), price.into()),
                    (slot("area"), area.into()),
                ],
            );
            b.system(
                &format!("{name} is a {price} hotel in the {area} . shall i book it ?"),
                &["Hotel-Recommend"],
            );
        }
        "attraction" => {
            let kind = pick(&ATTRACTIONS, rng.gen());
            let area = pick(&AREAS, rng.gen());
            h = mix(mix(2, kind), area);
            let name = pick(&NAMES, h);
            b.user(
                &format!("{opener} a {kind} in the {area}"),
                &[(slot("type"), kind.into()), (slot("area"), area.into())],
            );
            b.system(
                &format!("you should visit {name} , a {kind} in the {area} ."),
                &["Attraction-Recommend"],
            );
        }
        "train" => {
            let from = pick(&PLACES, rng.gen());
            let to = loop {
                let t = pick(&PLACES, rng.gen());
                if t != from {
                    break t;
                }
            };
            h = mix(mix(3, from), to);
            let time = pick(&TRAIN_TIMES, h);
            b.user(
                &format!("{opener} a train from {from} to {to}"),
                &[
                    (slot("departure"), from.into()),
                    (slot("destination"), to.into()),
                ],
            );
            b.system(
                &format!("there is a train from {from} to {to} leaving at {time} ."),
                &["Train-Inform"],
            );
        }
        _ => {
            let from = pick(&PLACES, rng.gen());
            let to = loop {
                let t = pick(&PLACES, rng.gen());
                if t != from {
                    break t;
                }
            };
            h = mix(mix(4, from), to);
            let car = pick(&CARS, h);
            b.user(
                &format!("{opener} a taxi from {from} to {to}"),
                &[
                    (slot("departure"), from.into()),
                    (slot("destination"), to.into()),
                ],
            );
            b.system(&format!("a {car} will pick you up at {from} ."), &["Taxi-Inform"]);
        }
    }

    // Optional booking exchange for domains with booking slots.
    let bookable = matches!(domain, "restaurant" | "hotel" | "train");
    if bookable && rng.gen_bool(0.5) {
        let people = pick(&PEOPLE, rng.gen());
        let day = pick(&DAYS, rng.gen());
        let reference = pick(&REFS, mix(mix(h, people), day));
        b.user(
            &format!("book it for {people} people on {day} please"),
            &[(slot("people"), people.into()), (slot("day"), day.into())],
        );
        b.system(
            &format!("booked for {people} people on {day} . your reference is {reference} ."),
            &["Booking-Book"],
        );
    }

    // Follow-up question/answer pairs; answers derive from the scenario hash.
    for _ in 0..rng.gen_range(0..=2u32) {
        match domain {
            "restaurant" => {
                let phone = pick(&PHONES, h);
                b.user("what is the phone number ?", &[]);
                b.system(
                    &format!("the phone number is {phone} ."),
                    &["Restaurant-Inform"],
                );
            }
            "hotel" => {
                b.user("is there free parking ?", &[(slot("parking"), "yes".into())]);
                b.system("yes , parking is included .", &["Hotel-Inform"]);
            }
            "attraction" => {
                let fee = pick(&FEES, h);
                b.user("what is the entrance fee ?", &[]);
                b.system(
                    &format!("the entrance fee is {fee} pounds ."),
                    &["Attraction-Inform"],
                );
            }
            "train" => {
                let minutes = pick(&MINUTES, h);
                b.user("how long is the journey ?", &[]);
                b.system(
                    &format!("the journey takes {minutes} minutes ."),
                    &["Train-Inform"],
                );
            }
            _ => {
                let car = pick(&CARS, h);
                b.user("what type of car is it ?", &[]);
                b.system(&format!("it is a {car} ."), &["Taxi-Inform"]);
            }
        }
        h = h.wrapping_add(0x9e37_79b9);
    }

    if rng.gen_bool(0.7) {
        b.user("thank you goodbye", &[]);
        b.system("you are welcome . goodbye .", &["general-bye"]);
    }

    // The builder only produces schema-valid labels; check in debug builds.
    debug_assert!(b
        .belief
        .keys()
        .all(|k| schema.slot_index(k).is_some()));

    Dialog {
        id: id.to_string(),
        domains: [domain.to_string()].into_iter().collect(),
        turns: b.turns,
    }
}

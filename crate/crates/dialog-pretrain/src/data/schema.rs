//! Belief-state schema (29 slots, 1784-dimensional one-hot target) and the
//! 32-entry system dialog act inventory.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// One slot with its closed value inventory. `values[0]` is always the
/// explicit `none` value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlotDef {
    pub domain: String,
    pub slot: String,
    pub values: Vec<String>,
}

impl SlotDef {
    pub fn key(&self) -> String {
        format!("{}-{}", self.domain, self.slot)
    }
}

/// Ordered slot list with precomputed offsets into the concatenated
/// one-hot target vector.
#[derive(Debug, Clone)]
pub struct BeliefSchema {
    slots: Vec<SlotDef>,
    offsets: Vec<usize>,
    total: usize,
    key_index: BTreeMap<String, usize>,
    value_index: Vec<BTreeMap<String, usize>>,
}

impl BeliefSchema {
    pub fn from_slots(mut slots: Vec<SlotDef>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(slots.len());
        let mut key_index = BTreeMap::new();
        let mut value_index = Vec::with_capacity(slots.len());
        let mut total = 0;
        for (i, def) in slots.iter_mut().enumerate() {
            if def.values.first().map(String::as_str) != Some("none") {
                def.values.insert(0, "none".to_string());
            }
            let mut vals = BTreeMap::new();
            for (vi, v) in def.values.iter().enumerate() {
                if vals.insert(v.clone(), vi).is_some() {
                    return Err(Error::Config(format!(
                        "duplicate value {v:?} in slot {}",
                        def.key()
                    )));
                }
            }
            if key_index.insert(def.key(), i).is_some() {
                return Err(Error::Config(format!("duplicate slot {}", def.key())));
            }
            offsets.push(total);
            total += def.values.len();
            value_index.push(vals);
        }
        Ok(BeliefSchema {
            slots,
            offsets,
            total,
            key_index,
            value_index,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let slots: Vec<SlotDef> = serde_json::from_str(&text)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        Self::from_slots(slots)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.slots)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        crate::harness::write_atomic(path, text.as_bytes())
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn total_dim(&self) -> usize {
        self.total
    }

    pub fn slot(&self, i: usize) -> &SlotDef {
        &self.slots[i]
    }

    pub fn slots(&self) -> &[SlotDef] {
        &self.slots
    }

    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    pub fn dim(&self, i: usize) -> usize {
        self.slots[i].values.len()
    }

    pub fn slot_index(&self, key: &str) -> Option<usize> {
        self.key_index.get(key).copied()
    }

    pub fn value_index(&self, slot: usize, value: &str) -> Option<usize> {
        self.value_index[slot].get(value).copied()
    }

    /// Per-slot value indices for a turn's belief labels. Missing slots and
    /// unknown values map to `none` (index 0); corpus loading is where
    /// unknown values are reported.
    pub fn encode_belief(&self, belief: Option<&BTreeMap<String, String>>) -> Vec<usize> {
        let mut out = vec![0; self.slots.len()];
        if let Some(map) = belief {
            for (key, value) in map {
                if let Some(si) = self.slot_index(key) {
                    out[si] = self.value_index(si, value).unwrap_or(0);
                }
            }
        }
        out
    }

    /// Flattened offsets of the encoded indices in the concatenated
    /// one-hot vector.
    pub fn flatten(&self, indices: &[usize]) -> Vec<usize> {
        indices
            .iter()
            .enumerate()
            .map(|(s, &i)| self.offsets[s] + i)
            .collect()
    }

    /// Total one-hot width per domain, in schema order.
    pub fn domain_dims(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for def in &self.slots {
            match out.last_mut() {
                Some((d, n)) if *d == def.domain => *n += def.values.len(),
                _ => out.push((def.domain.clone(), def.values.len())),
            }
        }
        out
    }

    /// The standard MultiWoz schema: 29 slots across 6 domains flattening
    /// to exactly 1784 dimensions (839/269/52/143/67/414 per domain).
    /// Open-vocabulary slots carry generated inventories sized to the
    /// published widths; a corpus-specific schema file can replace them.
    pub fn multiwoz() -> Self {
        let mut slots = Vec::new();
        let mut add = |domain: &str, slot: &str, values: Vec<String>| {
            slots.push(SlotDef {
                domain: domain.into(),
                slot: slot.into(),
                values,
            });
        };

        add("taxi", "leaveAt", times(212));
        add("taxi", "destination", places(208));
        add("taxi", "departure", places(208));
        add("taxi", "arriveBy", times(211));

        add("restaurant", "time", times(107));
        add("restaurant", "day", days(9));
        add("restaurant", "people", counts(10));
        add("restaurant", "food", foods(120));
        add("restaurant", "pricerange", prices(7));
        add("restaurant", "area", areas(16));

        add("hospital", "department", departments(52));

        add("hotel", "stay", counts(27));
        add("hotel", "day", days(15));
        add("hotel", "people", counts(17));
        add("hotel", "area", areas(16));
        add("hotel", "parking", yes_no(8));
        add("hotel", "pricerange", prices(10));
        add("hotel", "stars", counts(17));
        add("hotel", "internet", yes_no(8));
        add("hotel", "type", hotel_types(25));

        add("attraction", "type", attraction_types(35));
        add("attraction", "area", areas(32));

        add("train", "people", counts(15));
        add("train", "ticket", tickets(12));
        add("train", "leaveAt", times(105));
        add("train", "destination", places(65));
        add("train", "day", days(11));
        add("train", "arriveBy", times(104));
        add("train", "departure", places(102));

        Self::from_slots(slots).expect("built-in schema is well-formed")
    }
}

/// `n` values total: `none`, `dontcare`, then `n - 2` generated entries.
fn pad(base: &[&str], n: usize, filler: &str) -> Vec<String> {
    let mut out = vec!["none".to_string(), "dontcare".to_string()];
    for b in base {
        if out.len() == n {
            return out;
        }
        out.push((*b).to_string());
    }
    let mut k = 1;
    while out.len() < n {
        out.push(format!("{filler} {k}"));
        k += 1;
    }
    out
}

fn times(n: usize) -> Vec<String> {
    let mut out = vec!["none".to_string(), "dontcare".to_string()];
    let mut minutes = 0usize;
    while out.len() < n {
        out.push(format!("{:02}:{:02}", minutes / 60, minutes % 60));
        minutes += 5;
    }
    out
}

fn places(n: usize) -> Vec<String> {
    pad(
        &[
            "cambridge station",
            "city centre",
            "the airport",
            "kings college",
            "queens college",
            "the university arms",
            "parkside police station",
            "addenbrookes hospital",
            "the grand arcade",
            "mill road",
            "the botanic gardens",
            "fen ditton",
            "the junction",
            "regent street",
            "magdalene bridge",
            "the guildhall",
        ],
        n,
        "location",
    )
}

fn days(n: usize) -> Vec<String> {
    pad(
        &[
            "monday",
            "tuesday",
            "wednesday",
            "thursday",
            "friday",
            "saturday",
            "sunday",
            "weekend",
            "weekday",
            "tonight",
            "tomorrow",
            "today",
            "next week",
        ],
        n,
        "day",
    )
}

fn counts(n: usize) -> Vec<String> {
    let mut out = vec!["none".to_string(), "dontcare".to_string()];
    let mut k = 1usize;
    while out.len() < n {
        out.push(k.to_string());
        k += 1;
    }
    out
}

fn foods(n: usize) -> Vec<String> {
    pad(
        &[
            "italian",
            "chinese",
            "indian",
            "british",
            "french",
            "thai",
            "japanese",
            "mexican",
            "spanish",
            "turkish",
            "korean",
            "vietnamese",
            "portuguese",
            "mediterranean",
            "european",
            "gastropub",
            "seafood",
            "lebanese",
            "african",
            "american",
            "vegetarian",
            "greek",
            "persian",
            "malaysian",
            "polish",
            "russian",
            "cuban",
            "moroccan",
            "austrian",
            "swiss",
        ],
        n,
        "cuisine",
    )
}

fn prices(n: usize) -> Vec<String> {
    pad(
        &["cheap", "moderate", "expensive", "budget", "mid range"],
        n,
        "price tier",
    )
}

fn areas(n: usize) -> Vec<String> {
    pad(
        &[
            "centre",
            "north",
            "south",
            "east",
            "west",
            "city centre",
            "riverside",
            "outskirts",
            "old town",
            "new town",
        ],
        n,
        "district",
    )
}

fn departments(n: usize) -> Vec<String> {
    pad(
        &[
            "cardiology",
            "neurology",
            "oncology",
            "paediatrics",
            "radiology",
            "orthopaedics",
            "dermatology",
            "gastroenterology",
            "haematology",
            "urology",
            "ophthalmology",
            "psychiatry",
            "rheumatology",
            "nephrology",
            "endocrinology",
            "immunology",
            "respiratory medicine",
            "emergency department",
            "intensive care",
            "maternity",
            "physiotherapy",
            "audiology",
        ],
        n,
        "ward",
    )
}

fn yes_no(n: usize) -> Vec<String> {
    pad(&["yes", "no", "free", "included", "paid"], n, "option")
}

fn hotel_types(n: usize) -> Vec<String> {
    pad(
        &["hotel", "guesthouse", "bed and breakfast", "hostel", "inn"],
        n,
        "lodging",
    )
}

fn attraction_types(n: usize) -> Vec<String> {
    pad(
        &[
            "museum",
            "college",
            "park",
            "cinema",
            "theatre",
            "nightclub",
            "swimming pool",
            "architecture",
            "boat",
            "concert hall",
            "gallery",
            "entertainment",
            "sports",
            "church",
            "zoo",
        ],
        n,
        "venue type",
    )
}

fn tickets(n: usize) -> Vec<String> {
    pad(
        &[
            "standard", "first class", "return", "single", "off peak", "anytime",
        ],
        n,
        "fare",
    )
}

/// The 32 system dialog acts, in label-vector order.
pub const ACT_INVENTORY: [&str; 32] = [
    "Attraction-Inform",
    "Attraction-NoOffer",
    "Attraction-Recommend",
    "Attraction-Request",
    "Attraction-Select",
    "Booking-Book",
    "Booking-Inform",
    "Booking-NoBook",
    "Booking-Request",
    "Hotel-Inform",
    "Hotel-NoOffer",
    "Hotel-Recommend",
    "Hotel-Request",
    "Hotel-Select",
    "Police-Inform",
    "Restaurant-Inform",
    "Restaurant-NoOffer",
    "Restaurant-Recommend",
    "Restaurant-Request",
    "Restaurant-Select",
    "Taxi-Inform",
    "Taxi-Request",
    "Train-Inform",
    "Train-NoOffer",
    "Train-OfferBook",
    "Train-OfferBooked",
    "Train-Request",
    "Train-Select",
    "general-bye",
    "general-greet",
    "general-reqmore",
    "general-welcome",
];

pub fn act_index(name: &str) -> Option<usize> {
    ACT_INVENTORY.iter().position(|&a| a == name)
}

/// Multi-hot act vector for a system turn.
pub fn encode_acts(acts: &std::collections::BTreeSet<String>) -> Vec<bool> {
    let mut out = vec![false; ACT_INVENTORY.len()];
    for a in acts {
        if let Some(i) = act_index(a) {
            out[i] = true;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multiwoz_schema_flattens_to_1784() {
        let schema = BeliefSchema::multiwoz();
        assert_eq!(schema.num_slots(), 29);
        assert_eq!(schema.total_dim(), 1784);
        let dims: usize = (0..schema.num_slots()).map(|i| schema.dim(i)).sum();
        assert_eq!(dims, 1784);
    }

    #[test]
    fn multiwoz_domain_blocks_match_published_widths() {
        let schema = BeliefSchema::multiwoz();
        let dims = schema.domain_dims();
        let expected = [
            ("taxi", 839),
            ("restaurant", 269),
            ("hospital", 52),
            ("hotel", 143),
            ("attraction", 67),
            ("train", 414),
        ];
        assert_eq!(dims.len(), expected.len());
        for ((domain, dim), (ed, edim)) in dims.iter().zip(expected) {
            assert_eq!(domain, ed);
            assert_eq!(*dim, edim, "{domain}");
        }
        assert_eq!(839 + 269 + 52 + 143 + 67 + 414, 1784);
    }

    #[test]
    fn act_inventory_has_exactly_32_unique_entries() {
        assert_eq!(ACT_INVENTORY.len(), 32);
        let set: std::collections::BTreeSet<_> = ACT_INVENTORY.iter().collect();
        assert_eq!(set.len(), 32);
    }

    #[test]
    fn encode_belief_defaults_to_none_indices() {
        let schema = BeliefSchema::multiwoz();
        let indices = schema.encode_belief(None);
        assert_eq!(indices, vec![0; 29]);
        let flat = schema.flatten(&indices);
        for (s, &f) in flat.iter().enumerate() {
            assert_eq!(f, schema.offset(s));
        }
    }

    #[test]
    fn encode_belief_uses_inventory_positions() {
        let schema = BeliefSchema::multiwoz();
        let mut belief = std::collections::BTreeMap::new();
        belief.insert("restaurant-day".to_string(), "monday".to_string());
        let indices = schema.encode_belief(Some(&belief));
        let si = schema.slot_index("restaurant-day").unwrap();
        // none, dontcare, monday, ...
        assert_eq!(indices[si], 2);
    }

    #[test]
    fn none_is_auto_prepended_on_load() {
        let slots = vec![SlotDef {
            domain: "toy".into(),
            slot: "color".into(),
            values: vec!["red".into(), "blue".into()],
        }];
        let schema = BeliefSchema::from_slots(slots).unwrap();
        assert_eq!(schema.dim(0), 3);
        assert_eq!(schema.value_index(0, "none"), Some(0));
    }
}

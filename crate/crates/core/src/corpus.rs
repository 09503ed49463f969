//! Deterministic synthetic food corpus in the ingestion line format.
//!
//! A curated list of everyday foods comes first so that common phrases
//! ("laksa", "salmon") resolve exactly; the rest are adjective × base ×
//! style combinations drawn in a seeded shuffle. Bases cover all six
//! category labels, and the first synthetic records take one base per
//! label so even tiny corpora hit every label.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::Source;
use crate::graph::{RawFoodRecord, RawRestaurant, RestaurantRef};
use crate::types::CategoryLabel;

/// Everyday foods emitted first, as generic records.
pub const STAPLES: &[&str] = &[
    "laksa",
    "chicken rice",
    "nasi lemak",
    "char kway teow",
    "fish soup",
    "fish ball noodles",
    "salmon",
    "salmon sashimi",
    "tuna sandwich",
    "apple",
    "banana",
    "orange",
    "papaya",
    "mixed salad",
    "stir fried kailan",
    "beef rendang",
    "char siew rice",
    "bacon",
    "chocolate cake",
    "bubble tea",
    "ice cream",
    "peanuts",
    "almonds",
    "mineral water",
    "brown rice",
    "roti prata",
    "yong tau foo",
    "kaya toast",
    "oatmeal",
    "wonton noodles",
];

const ADJECTIVES: &[&str] = &[
    "grilled",
    "steamed",
    "fried",
    "braised",
    "spicy",
    "crispy",
    "roasted",
    "smoked",
    "sweet",
    "sour",
    "herbal",
    "curry",
    "sambal",
    "garlic",
    "ginger",
    "black pepper",
    "claypot",
    "teriyaki",
    "honey",
    "lemon",
];

const BASES: &[(&str, Option<CategoryLabel>)] = &[
    ("vegetable", Some(CategoryLabel::FruitVeg)),
    ("spinach", Some(CategoryLabel::FruitVeg)),
    ("broccoli", Some(CategoryLabel::FruitVeg)),
    ("cabbage", Some(CategoryLabel::FruitVeg)),
    ("eggplant", Some(CategoryLabel::FruitVeg)),
    ("mango salad", Some(CategoryLabel::FruitVeg)),
    ("papaya", Some(CategoryLabel::FruitVeg)),
    ("beef", Some(CategoryLabel::RedProcessedMeat)),
    ("pork belly", Some(CategoryLabel::RedProcessedMeat)),
    ("mutton", Some(CategoryLabel::RedProcessedMeat)),
    ("sausage", Some(CategoryLabel::RedProcessedMeat)),
    ("lamb", Some(CategoryLabel::RedProcessedMeat)),
    ("fish", Some(CategoryLabel::Fish)),
    ("salmon", Some(CategoryLabel::Fish)),
    ("mackerel", Some(CategoryLabel::Fish)),
    ("pomfret", Some(CategoryLabel::Fish)),
    ("tuna", Some(CategoryLabel::Fish)),
    ("cake", Some(CategoryLabel::AddedSugar)),
    ("donut", Some(CategoryLabel::AddedSugar)),
    ("waffle", Some(CategoryLabel::AddedSugar)),
    ("kueh", Some(CategoryLabel::AddedSugar)),
    ("peanut", Some(CategoryLabel::Nut)),
    ("cashew", Some(CategoryLabel::Nut)),
    ("almond", Some(CategoryLabel::Nut)),
    ("water", Some(CategoryLabel::Water)),
    ("chicken rice", None),
    ("chicken", None),
    ("tofu", None),
    ("egg", None),
    ("noodles", None),
    ("prawn", None),
    ("duck", None),
    ("rice", None),
];

const STYLES: &[&str] = &["", "set", "bowl", "platter", "wrap", "soup", "bento", "special"];

const PLACES: &[&str] = &[
    "Maxwell",
    "Tiong Bahru",
    "Amoy Street",
    "Old Airport Road",
    "Chinatown",
    "Newton",
    "Lau Pa Sat",
    "Tekka",
    "Bedok",
    "Clementi",
    "Toa Payoh",
    "Geylang",
    "Katong",
    "Bugis",
    "Jurong",
    "Serangoon",
];

const OUTLETS: &[&str] = &[
    "Hawker Stall",
    "Kitchen",
    "Eating House",
    "Cafe",
    "Food Court",
    "Kopitiam",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusSpec {
    pub n_foods: usize,
    pub n_restaurants: usize,
    pub seed: u64,
}

/// Upper bound on distinct food names the generator can produce.
pub fn capacity() -> usize {
    STAPLES.len() + ADJECTIVES.len() * BASES.len() * STYLES.len()
}

fn compose(adj: &str, base: &str, style: &str) -> String {
    if style.is_empty() {
        format!("{adj} {base}")
    } else {
        format!("{adj} {base} {style}")
    }
}

/// Generated records, `n_foods` of them with distinct names.
pub fn generate_records(spec: &CorpusSpec) -> crate::Result<Vec<RawFoodRecord>> {
    if spec.n_foods > capacity() {
        return Err(crate::Error::validation(format!(
            "n_foods exceeds generator capacity {}",
            capacity()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let restaurants: Vec<RawRestaurant> = (0..spec.n_restaurants)
        .map(|i| RawRestaurant {
            name: format!(
                "{} {} {}",
                PLACES[i % PLACES.len()],
                OUTLETS[(i / PLACES.len()) % OUTLETS.len()],
                i + 1
            ),
            lat: rng.gen_range(1.25..1.45),
            lon: rng.gen_range(103.65..103.98),
            address: Some(format!(
                "{} Road #{:02}-{:02}",
                PLACES[i % PLACES.len()],
                rng.gen_range(1..5),
                rng.gen_range(1..90)
            )),
            contact: None,
            cuisine: Some(["local", "chinese", "malay", "indian", "western"][rng.gen_range(0..5)].to_owned()),
        })
        .collect();

    // One base per label first, then everything else shuffled.
    let mut combos: Vec<(usize, usize, usize)> = Vec::new();
    for a in 0..ADJECTIVES.len() {
        for b in 0..BASES.len() {
            for s in 0..STYLES.len() {
                combos.push((a, b, s));
            }
        }
    }
    combos.shuffle(&mut rng);
    let mut lead = Vec::new();
    for label in CategoryLabel::TRACKED {
        if let Some(pos) = combos.iter().position(|&(_, b, _)| BASES[b].1 == Some(label)) {
            lead.push(combos.remove(pos));
        }
    }
    let synthetic = lead
        .into_iter()
        .chain(combos)
        .map(|(a, b, s)| compose(ADJECTIVES[a], BASES[b].0, STYLES[s]));

    let staples = STAPLES.iter().map(|s| s.to_string());
    let names: Vec<String> = if spec.n_foods >= STAPLES.len() + CategoryLabel::TRACKED.len() {
        staples.chain(synthetic).take(spec.n_foods).collect()
    } else {
        synthetic.take(spec.n_foods).collect()
    };

    let mut seen = vec![false; restaurants.len()];
    Ok(names
        .into_iter()
        .map(|name| {
            let at_restaurant = !restaurants.is_empty() && rng.gen_bool(0.6);
            let restaurant = at_restaurant.then(|| {
                let i = rng.gen_range(0..restaurants.len());
                if std::mem::replace(&mut seen[i], true) {
                    RestaurantRef::Named(restaurants[i].name.clone())
                } else {
                    RestaurantRef::Inline(restaurants[i].clone())
                }
            });
            RawFoodRecord {
                source: if restaurant.is_some() {
                    Source::Restaurant
                } else {
                    Source::Generic
                },
                price: restaurant.as_ref().map(|_| f64::from(rng.gen_range(30u32..150)) / 10.0),
                description: None,
                restaurant,
                aliases: Vec::new(),
                reviews: Vec::new(),
                name,
            }
        })
        .collect())
}

/// The corpus as ingestion lines, newline-terminated.
pub fn generate(spec: &CorpusSpec) -> crate::Result<String> {
    let mut out = String::new();
    for r in generate_records(spec)? {
        out.push_str(&serde_json::to_string(&r).map_err(|e| crate::Error::Storage(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

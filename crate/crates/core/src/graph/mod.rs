//! Food knowledge graph: food and restaurant entities, category labels,
//! availability edges (food–restaurant) and similarity edges (food–food).
//!
//! The graph is built by ingestion and then shared read-only. The only
//! mutable part is each food's popularity counter, which is atomic.

mod ingest;
pub mod lexicon;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{normalize_name, trigrams};
use crate::types::{CategoryLabel, FoodId, RestaurantId};

pub use ingest::{parse_record, IngestReport, RawFoodRecord, RawRestaurant, RecordError, RestaurantRef};
pub use lexicon::Lexicon;

/// Where a food record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Restaurant,
    Packaged,
    Generic,
}

impl Source {
    /// Exact-match tie-break rank; lower wins.
    fn priority(self) -> u8 {
        match self {
            Source::Generic => 0,
            Source::Restaurant => 1,
            Source::Packaged => 2,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FoodEntity {
    pub id: FoodId,
    pub canonical_name: String,
    pub name_variants: BTreeSet<String>,
    pub description: Option<String>,
    pub price: Option<f64>,
    pub source: Source,
    pub category_labels: BTreeSet<CategoryLabel>,
    /// Stored verbatim, never interpreted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reviews: Vec<String>,
    #[serde(with = "atomic_count")]
    popularity_count: AtomicU64,
}

impl FoodEntity {
    pub fn popularity_count(&self) -> u64 {
        self.popularity_count.load(Ordering::Relaxed)
    }
}

impl Clone for FoodEntity {
    fn clone(&self) -> Self {
        FoodEntity {
            id: self.id,
            canonical_name: self.canonical_name.clone(),
            name_variants: self.name_variants.clone(),
            description: self.description.clone(),
            price: self.price,
            source: self.source,
            category_labels: self.category_labels.clone(),
            reviews: self.reviews.clone(),
            popularity_count: AtomicU64::new(self.popularity_count()),
        }
    }
}

mod atomic_count {
    use std::sync::atomic::{AtomicU64, Ordering};

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &AtomicU64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(v.load(Ordering::Relaxed))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<AtomicU64, D::Error> {
        u64::deserialize(d).map(AtomicU64::new)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestaurantEntity {
    pub id: RestaurantId,
    pub name: String,
    pub location: GeoPoint,
    pub address: Option<String>,
    pub contact: Option<String>,
    pub cuisine_type: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AvailabilityEdge {
    pub food_id: FoodId,
    pub restaurant_id: RestaurantId,
}

/// Undirected; stored with `food_id_a < food_id_b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityEdge {
    pub food_id_a: FoodId,
    pub food_id_b: FoodId,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub similarity_threshold: f64,
    pub search_floor: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            similarity_threshold: 0.4,
            search_floor: 0.1,
        }
    }
}

pub const DEFAULT_SEARCH_LIMIT: usize = 15;

/// A ranked search result.
#[derive(Debug, Clone, Copy)]
pub struct SearchHit<'g> {
    pub food: &'g FoodEntity,
    pub score: f64,
    pub exact: bool,
}

/// Serialized form of a graph.
#[derive(Serialize, Deserialize)]
struct Snapshot {
    config: GraphConfig,
    lexicon: Lexicon,
    foods: Vec<FoodEntity>,
    restaurants: Vec<RestaurantEntity>,
    availability: Vec<AvailabilityEdge>,
    similarity: Vec<SimilarityEdge>,
}

type Gram = [char; 3];

#[derive(Debug)]
struct Variant {
    food: FoodId,
    gram_count: usize,
}

pub struct KnowledgeGraph {
    config: GraphConfig,
    lexicon: Lexicon,
    foods: Vec<FoodEntity>,
    restaurants: Vec<RestaurantEntity>,
    dedup: HashMap<(String, Source), FoodId>,
    restaurant_by_name: HashMap<String, RestaurantId>,
    by_variant: HashMap<String, Vec<FoodId>>,
    variants: Vec<Variant>,
    variant_grams: HashMap<Gram, Vec<u32>>,
    canonical_grams: HashMap<Gram, Vec<FoodId>>,
    canonical_len: Vec<usize>,
    availability: BTreeSet<(FoodId, RestaurantId)>,
    by_restaurant: HashMap<RestaurantId, BTreeSet<FoodId>>,
    similarity: BTreeMap<(FoodId, FoodId), f64>,
    neighbors: HashMap<FoodId, Vec<(FoodId, f64)>>,
}

impl KnowledgeGraph {
    pub fn new(lexicon: Lexicon) -> Self {
        KnowledgeGraph::with_config(lexicon, GraphConfig::default())
    }

    pub fn with_config(lexicon: Lexicon, config: GraphConfig) -> Self {
        KnowledgeGraph {
            config,
            lexicon,
            foods: Vec::new(),
            restaurants: Vec::new(),
            dedup: HashMap::new(),
            restaurant_by_name: HashMap::new(),
            by_variant: HashMap::new(),
            variants: Vec::new(),
            variant_grams: HashMap::new(),
            canonical_grams: HashMap::new(),
            canonical_len: Vec::new(),
            availability: BTreeSet::new(),
            by_restaurant: HashMap::new(),
            similarity: BTreeMap::new(),
            neighbors: HashMap::new(),
        }
    }

    pub fn config(&self) -> &GraphConfig {
        &self.config
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn food_count(&self) -> usize {
        self.foods.len()
    }

    pub fn restaurant_count(&self) -> usize {
        self.restaurants.len()
    }

    pub fn availability_edge_count(&self) -> usize {
        self.availability.len()
    }

    pub fn similarity_edge_count(&self) -> usize {
        self.similarity.len()
    }

    pub fn foods(&self) -> impl Iterator<Item = &FoodEntity> {
        self.foods.iter()
    }

    pub fn restaurants(&self) -> impl Iterator<Item = &RestaurantEntity> {
        self.restaurants.iter()
    }

    pub fn availability_edges(&self) -> impl Iterator<Item = AvailabilityEdge> + '_ {
        self.availability
            .iter()
            .map(|&(food_id, restaurant_id)| AvailabilityEdge { food_id, restaurant_id })
    }

    pub fn similarity_edges(&self) -> impl Iterator<Item = SimilarityEdge> + '_ {
        self.similarity.iter().map(|(&(a, b), &score)| SimilarityEdge {
            food_id_a: a,
            food_id_b: b,
            score,
        })
    }

    pub fn food(&self, id: FoodId) -> Option<&FoodEntity> {
        self.foods.get(id.0 as usize)
    }

    pub fn restaurant(&self, id: RestaurantId) -> Option<&RestaurantEntity> {
        self.restaurants.get(id.0 as usize)
    }

    fn require_food(&self, id: FoodId) -> Result<&FoodEntity> {
        self.food(id).ok_or_else(|| Error::not_found(format!("food {id}")))
    }

    pub fn restaurant_by_name(&self, name: &str) -> Option<&RestaurantEntity> {
        self.restaurant_by_name
            .get(&normalize_name(name))
            .and_then(|&id| self.restaurant(id))
    }

    /// Entity whose name variants contain the normalized name. Ties across
    /// sources go generic, restaurant, packaged; then popularity; then id.
    pub fn exact_match(&self, name: &str) -> Option<&FoodEntity> {
        let key = normalize_name(name);
        let ids = self.by_variant.get(&key)?;
        ids.iter().filter_map(|&id| self.food(id)).min_by(|a, b| {
            a.source
                .priority()
                .cmp(&b.source.priority())
                .then(b.popularity_count().cmp(&a.popularity_count()))
                .then(a.id.cmp(&b.id))
        })
    }

    /// Top `limit` foods by character-trigram Jaccard similarity between the
    /// normalized query and each food's best-matching name variant. Exact
    /// matches rank first; scores below the configured floor are dropped.
    pub fn search_food(&self, query: &str, limit: usize) -> Vec<SearchHit<'_>> {
        let q = normalize_name(query);
        if q.is_empty() || limit == 0 {
            return Vec::new();
        }
        let q_grams = trigrams(&q);
        let mut shared: HashMap<u32, usize> = HashMap::new();
        for gram in &q_grams {
            if let Some(posting) = self.variant_grams.get(gram) {
                for &v in posting {
                    *shared.entry(v).or_default() += 1;
                }
            }
        }
        let mut best: HashMap<FoodId, f64> = HashMap::new();
        for (v, inter) in shared {
            let variant = &self.variants[v as usize];
            let union = q_grams.len() + variant.gram_count - inter;
            let score = inter as f64 / union as f64;
            let slot = best.entry(variant.food).or_insert(0.0);
            if score > *slot {
                *slot = score;
            }
        }
        let exact_ids: BTreeSet<FoodId> = self.by_variant.get(&q).into_iter().flatten().copied().collect();
        let mut hits: Vec<SearchHit<'_>> = best
            .into_iter()
            .filter(|&(id, score)| score >= self.config.search_floor || exact_ids.contains(&id))
            .filter_map(|(id, score)| {
                let exact = exact_ids.contains(&id);
                self.food(id).map(|food| SearchHit {
                    food,
                    score: if exact { 1.0 } else { score },
                    exact,
                })
            })
            .collect();
        hits.sort_by(|a, b| rank_hits(a, b));
        hits.truncate(limit);
        hits
    }

    /// Top-k neighbors along similarity edges.
    pub fn similar_foods(&self, id: FoodId, k: usize) -> Result<Vec<&FoodEntity>> {
        self.require_food(id)?;
        let mut out: Vec<(&FoodEntity, f64)> = self
            .neighbors
            .get(&id)
            .into_iter()
            .flatten()
            .filter_map(|&(n, s)| self.food(n).map(|f| (f, s)))
            .collect();
        out.sort_by(|(fa, sa), (fb, sb)| {
            sb.total_cmp(sa)
                .then(fb.popularity_count().cmp(&fa.popularity_count()))
                .then(fa.canonical_name.cmp(&fb.canonical_name))
                .then(fa.id.cmp(&fb.id))
        });
        Ok(out.into_iter().take(k).map(|(f, _)| f).collect())
    }

    pub fn similarity_score(&self, a: FoodId, b: FoodId) -> Option<f64> {
        let key = if a < b { (a, b) } else { (b, a) };
        self.similarity.get(&key).copied()
    }

    /// Foods available at a restaurant, ordered by canonical name.
    pub fn foods_at_restaurant(&self, id: RestaurantId) -> Result<Vec<&FoodEntity>> {
        self.restaurant(id)
            .ok_or_else(|| Error::not_found(format!("restaurant {id}")))?;
        let mut out: Vec<&FoodEntity> = self
            .by_restaurant
            .get(&id)
            .into_iter()
            .flatten()
            .filter_map(|&f| self.food(f))
            .collect();
        out.sort_by(|a, b| a.canonical_name.cmp(&b.canonical_name).then(a.id.cmp(&b.id)));
        Ok(out)
    }

    pub fn restaurants_for_food(&self, id: FoodId) -> Vec<RestaurantId> {
        self.availability
            .range((id, RestaurantId(0))..=(id, RestaurantId(u32::MAX)))
            .map(|&(_, r)| r)
            .collect()
    }

    /// Category labels, `{other}` when the lexicon matched nothing.
    pub fn category_of(&self, id: FoodId) -> Result<BTreeSet<CategoryLabel>> {
        Ok(self.require_food(id)?.category_labels.clone())
    }

    pub fn has_label(&self, id: FoodId, label: CategoryLabel) -> bool {
        self.food(id).is_some_and(|f| f.category_labels.contains(&label))
    }

    /// Sets the popularity counter; used when recounting from the journal.
    pub fn set_popularity(&self, id: FoodId, count: u64) {
        if let Some(f) = self.food(id) {
            f.popularity_count.store(count, Ordering::Relaxed);
        }
    }

    pub fn adjust_popularity(&self, id: FoodId, delta: i64) {
        if let Some(f) = self.food(id) {
            if delta >= 0 {
                f.popularity_count.fetch_add(delta as u64, Ordering::Relaxed);
            } else {
                let _ = f
                    .popularity_count
                    .fetch_update(Ordering::Relaxed, Ordering::Relaxed, |c| {
                        Some(c.saturating_sub(delta.unsigned_abs()))
                    });
            }
        }
    }

    pub fn reset_popularity(&self) {
        for f in &self.foods {
            f.popularity_count.store(0, Ordering::Relaxed);
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let snap = Snapshot {
            config: self.config,
            lexicon: self.lexicon.clone(),
            foods: self.foods.clone(),
            restaurants: self.restaurants.clone(),
            availability: self.availability_edges().collect(),
            similarity: self.similarity_edges().collect(),
        };
        let json = serde_json::to_vec(&snap).map_err(|e| Error::Storage(e.to_string()))?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, json)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<KnowledgeGraph> {
        let bytes = std::fs::read(path)?;
        let snap: Snapshot = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Storage(format!("graph index {}: {e}", path.display())))?;
        let mut g = KnowledgeGraph::with_config(snap.lexicon, snap.config);
        for food in snap.foods {
            if food.id.0 as usize != g.foods.len() {
                return Err(Error::Storage("graph index ids are not dense".into()));
            }
            g.index_food(&food);
            g.dedup.insert((food.canonical_name.clone(), food.source), food.id);
            g.foods.push(food);
        }
        for r in snap.restaurants {
            g.restaurant_by_name.insert(normalize_name(&r.name), r.id);
            g.restaurants.push(r);
        }
        for e in snap.availability {
            g.link(e.food_id, e.restaurant_id);
        }
        for e in snap.similarity {
            g.insert_similarity(e.food_id_a, e.food_id_b, e.score);
        }
        g.check_integrity()?;
        Ok(g)
    }

    /// Verifies every edge endpoint resolves to a stored entity.
    pub fn check_integrity(&self) -> Result<()> {
        for e in self.availability_edges() {
            if self.food(e.food_id).is_none() || self.restaurant(e.restaurant_id).is_none() {
                return Err(Error::Storage(format!("dangling availability edge {e:?}")));
            }
        }
        for e in self.similarity_edges() {
            if e.food_id_a >= e.food_id_b || self.food(e.food_id_a).is_none() || self.food(e.food_id_b).is_none() {
                return Err(Error::Storage(format!("bad similarity edge {e:?}")));
            }
        }
        Ok(())
    }

    fn index_food(&mut self, food: &FoodEntity) {
        for v in &food.name_variants {
            self.index_variant(food.id, v);
        }
        let grams = trigrams(&food.canonical_name);
        self.canonical_len.push(grams.len());
        for gram in grams {
            self.canonical_grams.entry(gram).or_default().push(food.id);
        }
    }

    fn index_variant(&mut self, id: FoodId, variant: &str) {
        let grams = trigrams(variant);
        let idx = self.variants.len() as u32;
        self.variants.push(Variant {
            food: id,
            gram_count: grams.len(),
        });
        for g in grams {
            self.variant_grams.entry(g).or_default().push(idx);
        }
        self.by_variant.entry(variant.to_owned()).or_default().push(id);
    }

    fn link(&mut self, food: FoodId, restaurant: RestaurantId) -> bool {
        if self.availability.insert((food, restaurant)) {
            self.by_restaurant.entry(restaurant).or_default().insert(food);
            true
        } else {
            false
        }
    }

    fn insert_similarity(&mut self, a: FoodId, b: FoodId, score: f64) -> bool {
        let key = if a < b { (a, b) } else { (b, a) };
        if a == b || self.similarity.contains_key(&key) {
            return false;
        }
        self.similarity.insert(key, score);
        self.neighbors.entry(a).or_default().push((b, score));
        self.neighbors.entry(b).or_default().push((a, score));
        true
    }

    /// Adds similarity edges between `id` and every earlier-indexed food
    /// whose canonical name clears the threshold, then indexes `id`.
    fn connect_similar(&mut self, id: FoodId) -> usize {
        let name = self.foods[id.0 as usize].canonical_name.clone();
        let grams = trigrams(&name);
        let mut shared: HashMap<FoodId, usize> = HashMap::new();
        for g in &grams {
            if let Some(posting) = self.canonical_grams.get(g) {
                for &other in posting {
                    *shared.entry(other).or_default() += 1;
                }
            }
        }
        let mut created = 0;
        let mut candidates: Vec<(FoodId, usize)> = shared.into_iter().collect();
        candidates.sort();
        for (other, inter) in candidates {
            if other == id {
                continue;
            }
            let other_len = self.canonical_len[other.0 as usize];
            let score = inter as f64 / (grams.len() + other_len - inter) as f64;
            if score >= self.config.similarity_threshold && self.insert_similarity(id, other, score) {
                created += 1;
            }
        }
        for g in grams {
            self.canonical_grams.entry(g).or_default().push(id);
        }
        created
    }
}

fn rank_hits(a: &SearchHit<'_>, b: &SearchHit<'_>) -> std::cmp::Ordering {
    b.exact
        .cmp(&a.exact)
        .then(b.score.total_cmp(&a.score))
        .then(b.food.popularity_count().cmp(&a.food.popularity_count()))
        .then(a.food.canonical_name.cmp(&b.food.canonical_name))
        .then(a.food.id.cmp(&b.food.id))
}

//! Line-delimited corpus ingestion with normalization and deduplication.

use std::collections::BTreeSet;
use std::sync::atomic::AtomicU64;

use serde::{Deserialize, Serialize};

use super::{FoodEntity, GeoPoint, KnowledgeGraph, RestaurantEntity, Source};
use crate::text::normalize_name;
use crate::types::{CategoryLabel, FoodId, RestaurantId};

/// Inline restaurant definition carried by a food record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRestaurant {
    pub name: String,
    pub lat: f64,
    pub lon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub address: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contact: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cuisine: Option<String>,
}

/// A record's restaurant: a full definition, or a name referring to a
/// restaurant defined by an earlier record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RestaurantRef {
    Inline(RawRestaurant),
    Named(String),
}

/// One line of the ingestion file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawFoodRecord {
    pub name: String,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restaurant: Option<RestaurantRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reviews: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RecordError {
    #[error("line {line}: unparseable record: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    /// Well-formed food records processed; equals created + merged.
    pub records_read: usize,
    pub entities_created: usize,
    pub duplicates_merged: usize,
    pub rejected: usize,
    pub restaurants_created: usize,
    pub edges_created: usize,
    pub availability_dropped: usize,
}

/// Parses and validates one ingestion line (1-based `line` for messages).
pub fn parse_record(text: &str, line: usize) -> Result<RawFoodRecord, RecordError> {
    let rec: RawFoodRecord = serde_json::from_str(text).map_err(|e| RecordError::Syntax {
        line,
        reason: e.to_string(),
    })?;
    let invalid = |reason: &str| RecordError::Invalid {
        line,
        reason: reason.to_owned(),
    };
    if normalize_name(&rec.name).is_empty() {
        return Err(invalid("name is empty after normalization"));
    }
    if let Some(p) = rec.price {
        if !p.is_finite() || p < 0.0 {
            return Err(invalid("price must be a non-negative number"));
        }
    }
    match &rec.restaurant {
        Some(RestaurantRef::Inline(r)) => {
            if r.name.trim().is_empty() {
                return Err(invalid("restaurant name is empty"));
            }
            if !(-90.0..=90.0).contains(&r.lat) || !(-180.0..=180.0).contains(&r.lon) {
                return Err(invalid("restaurant coordinates out of range"));
            }
        }
        Some(RestaurantRef::Named(n)) if n.trim().is_empty() => {
            return Err(invalid("restaurant reference is empty"));
        }
        _ => {}
    }
    Ok(rec)
}

impl KnowledgeGraph {
    /// Ingests a line-delimited corpus. Blank lines are ignored; malformed
    /// lines are rejected individually.
    pub fn ingest_jsonl(&mut self, text: &str) -> IngestReport {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| parse_record(l, i + 1));
        self.ingest_records(records)
    }

    pub fn ingest_records(
        &mut self,
        records: impl IntoIterator<Item = Result<RawFoodRecord, RecordError>>,
    ) -> IngestReport {
        let mut report = IngestReport::default();
        let mut new_foods = Vec::new();
        for rec in records {
            let rec = match rec {
                Ok(r) => r,
                Err(e) => {
                    tracing::warn!("rejected record: {e}");
                    report.rejected += 1;
                    continue;
                }
            };
            report.records_read += 1;
            let canonical = normalize_name(&rec.name);
            let key = (canonical.clone(), rec.source);
            let id = match self.dedup.get(&key) {
                Some(&id) => {
                    report.duplicates_merged += 1;
                    self.merge_into(id, &rec);
                    id
                }
                None => {
                    let id = self.create_food(canonical, &rec);
                    self.dedup.insert(key, id);
                    report.entities_created += 1;
                    new_foods.push(id);
                    id
                }
            };
            if let Some(r) = &rec.restaurant {
                let rid = match r {
                    RestaurantRef::Inline(raw) => Some(self.upsert_restaurant(raw, &mut report)),
                    RestaurantRef::Named(name) => {
                        let found = self.restaurant_by_name.get(&normalize_name(name)).copied();
                        if found.is_none() {
                            tracing::warn!(restaurant = %name, food = %rec.name, "unknown restaurant; availability edge dropped");
                            report.availability_dropped += 1;
                        }
                        found
                    }
                };
                if let Some(rid) = rid {
                    if self.link(id, rid) {
                        report.edges_created += 1;
                    }
                }
            }
        }
        for id in new_foods {
            report.edges_created += self.connect_similar(id);
        }
        report
    }

    fn create_food(&mut self, canonical: String, rec: &RawFoodRecord) -> FoodId {
        let id = FoodId(self.foods.len() as u32);
        let mut variants: BTreeSet<String> = rec
            .aliases
            .iter()
            .map(|a| normalize_name(a))
            .filter(|a| !a.is_empty())
            .collect();
        variants.insert(canonical.clone());
        let food = FoodEntity {
            id,
            canonical_name: canonical,
            category_labels: self.labels_for(&variants),
            name_variants: variants,
            description: rec.description.clone(),
            price: rec.price,
            source: rec.source,
            reviews: rec.reviews.clone(),
            popularity_count: AtomicU64::new(0),
        };
        for v in food.name_variants.clone() {
            self.index_variant(id, &v);
        }
        self.canonical_len
            .push(crate::text::trigrams(&food.canonical_name).len());
        self.foods.push(food);
        id
    }

    fn merge_into(&mut self, id: FoodId, rec: &RawFoodRecord) {
        let fresh: Vec<String> = {
            let food = &self.foods[id.0 as usize];
            rec.aliases
                .iter()
                .map(|a| normalize_name(a))
                .filter(|a| !a.is_empty() && !food.name_variants.contains(a))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        };
        for v in &fresh {
            self.index_variant(id, v);
        }
        let food = &mut self.foods[id.0 as usize];
        food.name_variants.extend(fresh);
        if food.description.is_none() {
            food.description = rec.description.clone();
        }
        if food.price.is_none() {
            food.price = rec.price;
        }
        for r in &rec.reviews {
            if !food.reviews.contains(r) {
                food.reviews.push(r.clone());
            }
        }
        let variants = food.name_variants.clone();
        let labels = self.labels_for(&variants);
        self.foods[id.0 as usize].category_labels = labels;
    }

    fn labels_for(&self, variants: &BTreeSet<String>) -> BTreeSet<CategoryLabel> {
        let mut labels: BTreeSet<CategoryLabel> = variants.iter().flat_map(|v| self.lexicon.labels_for(v)).collect();
        if labels.is_empty() {
            labels.insert(CategoryLabel::Other);
        }
        labels
    }

    fn upsert_restaurant(&mut self, raw: &RawRestaurant, report: &mut IngestReport) -> RestaurantId {
        let key = normalize_name(&raw.name);
        if let Some(&id) = self.restaurant_by_name.get(&key) {
            return id;
        }
        let id = RestaurantId(self.restaurants.len() as u32);
        self.restaurants.push(RestaurantEntity {
            id,
            name: raw.name.trim().to_owned(),
            location: GeoPoint {
                lat: raw.lat,
                lon: raw.lon,
            },
            address: raw.address.clone(),
            contact: raw.contact.clone(),
            cuisine_type: raw.cuisine.clone(),
        });
        self.restaurant_by_name.insert(key, id);
        report.restaurants_created += 1;
        id
    }
}

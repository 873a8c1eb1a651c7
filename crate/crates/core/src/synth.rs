//! Synthetic funnel data with planted preferences.
//!
//! Items fall into categories and every user favors a few of them. Each
//! preferred item is viewed with probability `p_view`, carted with `p_cart`
//! given a view and bought with `p_buy` given a cart, with strictly
//! increasing timestamps along the way. Optional noise views hit random
//! items.

use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{dedup_interactions, BehaviorId, IdMap, Interaction};
use crate::model::{KgData, KgTriple};

pub const CATEGORY_RELATION: &str = "belongs_to";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub num_categories: usize,
    /// Favored categories per user.
    pub categories_per_user: usize,
    /// Preferred items per user.
    pub preferred_per_user: usize,
    /// Share of preferred items drawn from the favored categories.
    pub focus: f64,
    pub p_view: f64,
    pub p_cart: f64,
    pub p_buy: f64,
    /// Random views per user outside the funnel.
    pub noise_views: usize,
    /// Timestamps are drawn from `0..time_span`.
    pub time_span: i64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_users: 1000,
            num_items: 500,
            num_categories: 20,
            categories_per_user: 2,
            preferred_per_user: 20,
            focus: 0.9,
            p_view: 0.9,
            p_cart: 0.5,
            p_buy: 0.5,
            noise_views: 3,
            time_span: 10_000,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_users == 0 || self.num_items == 0 {
            return Err(Error::Config("synthetic data needs users and items".into()));
        }
        if self.num_categories == 0 || self.num_categories > self.num_items {
            return Err(Error::Config("num_categories must lie in 1..=num_items".into()));
        }
        if self.categories_per_user == 0 || self.categories_per_user > self.num_categories {
            return Err(Error::Config("categories_per_user must lie in 1..=num_categories".into()));
        }
        if self.preferred_per_user > self.num_items {
            return Err(Error::Config("preferred_per_user exceeds num_items".into()));
        }
        for (name, p) in [
            ("focus", self.focus),
            ("p_view", self.p_view),
            ("p_cart", self.p_cart),
            ("p_buy", self.p_buy),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        if self.time_span < 1 {
            return Err(Error::Config("time_span must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    /// Behaviors 0, 1, 2 are view, cart, buy.
    pub interactions: Vec<Interaction>,
    pub item_category: Vec<usize>,
    pub num_users: usize,
    pub num_items: usize,
    pub num_categories: usize,
}

pub fn behaviors() -> Vec<String> {
    vec!["view".into(), "cart".into(), "buy".into()]
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let item_category: Vec<usize> = (0..cfg.num_items).map(|i| i % cfg.num_categories).collect();
    let mut by_category = vec![Vec::new(); cfg.num_categories];
    for (i, &c) in item_category.iter().enumerate() {
        by_category[c].push(i);
    }

    let step = (cfg.time_span / 100).max(1);
    let mut out = Vec::new();
    for u in 0..cfg.num_users {
        let favored = sample_indices(&mut rng, cfg.num_categories, cfg.categories_per_user).into_vec();
        let mut chosen = vec![false; cfg.num_items];
        let mut preferred = Vec::with_capacity(cfg.preferred_per_user);
        let mut attempts = 0;
        while preferred.len() < cfg.preferred_per_user && attempts < 100 * cfg.num_items {
            attempts += 1;
            let i = if rng.random_bool(cfg.focus) {
                let pool = &by_category[favored[rng.random_range(0..favored.len())]];
                // early items of a category are more popular
                let r: f64 = rng.random();
                pool[((r * r) * pool.len() as f64) as usize]
            } else {
                rng.random_range(0..cfg.num_items)
            };
            if !chosen[i] {
                chosen[i] = true;
                preferred.push(i);
            }
        }
        for i in preferred {
            if !rng.random_bool(cfg.p_view) {
                continue;
            }
            let t0 = rng.random_range(0..cfg.time_span);
            out.push(Interaction::new(u, i, 0, Some(t0)));
            if !rng.random_bool(cfg.p_cart) {
                continue;
            }
            let t1 = t0 + rng.random_range(1..=step);
            out.push(Interaction::new(u, i, 1, Some(t1)));
            if rng.random_bool(cfg.p_buy) {
                let t2 = t1 + rng.random_range(1..=step);
                out.push(Interaction::new(u, i, 2, Some(t2)));
            }
        }
        for _ in 0..cfg.noise_views {
            let i = rng.random_range(0..cfg.num_items);
            out.push(Interaction::new(u, i, 0, Some(rng.random_range(0..cfg.time_span))));
        }
    }
    Ok(SynthData {
        interactions: dedup_interactions(out),
        item_category,
        num_users: cfg.num_users,
        num_items: cfg.num_items,
        num_categories: cfg.num_categories,
    })
}

pub fn user_id(u: usize) -> String {
    format!("u{u}")
}

pub fn item_id(i: usize) -> String {
    format!("i{i}")
}

#[derive(Serialize)]
struct Row<'a> {
    user_id: String,
    item_id: String,
    behavior: &'a str,
    timestamp: i64,
}

impl SynthData {
    /// Per-user counts of each behavior.
    pub fn behavior_counts(&self) -> Vec<[usize; 3]> {
        let mut counts = vec![[0; 3]; self.num_users];
        for x in &self.interactions {
            counts[x.user][x.behavior.index()] += 1;
        }
        counts
    }

    /// `user_id,item_id,behavior,timestamp` in the default ingest schema.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let names = behaviors();
        let mut w = csv::Writer::from_path(path.as_ref())?;
        for x in &self.interactions {
            w.serialize(Row {
                user_id: user_id(x.user),
                item_id: item_id(x.item),
                behavior: &names[x.behavior.index()],
                timestamp: x.timestamp.expect("synthetic edges carry timestamps"),
            })?;
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))
    }

    /// Item-category triples plus the one-line relation file.
    pub fn write_kg(&self, triples: impl AsRef<Path>, relations: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(triples.as_ref())?;
        w.write_record(["head_id", "relation", "tail_id"])?;
        for (i, c) in self.item_category.iter().enumerate() {
            w.write_record([item_id(i), CATEGORY_RELATION.to_string(), format!("c{c}")])?;
        }
        w.flush().map_err(|e| Error::io(triples.as_ref(), e))?;
        std::fs::write(relations.as_ref(), format!("{CATEGORY_RELATION}\n")).map_err(|e| Error::io(relations.as_ref(), e))
    }

    /// The item-category triples in memory; category `c` is entity
    /// `num_items + c`.
    pub fn kg_data(&self) -> KgData {
        KgData {
            triples: self
                .item_category
                .iter()
                .enumerate()
                .map(|(i, &c)| KgTriple {
                    head: i,
                    relation: 0,
                    tail: self.num_items + c,
                })
                .collect(),
            relations: vec![CATEGORY_RELATION.to_string()],
            entities: IdMap::from_ids((0..self.num_categories).map(|c| format!("c{c}")).collect()),
            num_items: self.num_items,
        }
    }

    /// Has `(user, behavior, item)`.
    pub fn has(&self, user: usize, behavior: BehaviorId, item: usize) -> bool {
        self.interactions
            .iter()
            .any(|x| x.user == user && x.item == item && x.behavior == behavior)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn funnel_counts_are_monotone() {
        let data = generate(&SynthConfig {
            num_users: 50,
            num_items: 80,
            ..Default::default()
        })
        .unwrap();
        for c in data.behavior_counts() {
            assert!(c[2] <= c[1] && c[1] <= c[0], "{c:?}");
        }
        assert!(data.interactions.iter().any(|x| x.behavior == BehaviorId(2)));
    }

    #[test]
    fn certain_funnel_gives_every_behavior() {
        let data = generate(&SynthConfig {
            num_users: 10,
            num_items: 30,
            num_categories: 3,
            p_view: 1.0,
            p_cart: 1.0,
            p_buy: 1.0,
            noise_views: 0,
            preferred_per_user: 5,
            ..Default::default()
        })
        .unwrap();
        let views: Vec<_> = data.interactions.iter().filter(|x| x.behavior == BehaviorId(0)).collect();
        assert_eq!(views.len(), 50);
        for v in views {
            assert!(data.has(v.user, BehaviorId(1), v.item));
            assert!(data.has(v.user, BehaviorId(2), v.item));
        }
    }

    #[test]
    fn timestamps_increase_along_the_funnel() {
        let data = generate(&SynthConfig {
            num_users: 20,
            num_items: 40,
            noise_views: 0,
            ..Default::default()
        })
        .unwrap();
        let ts = |u, b, i| {
            data.interactions
                .iter()
                .find(|x| x.user == u && x.item == i && x.behavior == BehaviorId(b))
                .and_then(|x| x.timestamp)
        };
        for x in data.interactions.iter().filter(|x| x.behavior == BehaviorId(2)) {
            let (v, c, b) = (ts(x.user, 0, x.item), ts(x.user, 1, x.item), x.timestamp);
            assert!(v < c && c < b);
        }
    }

    #[test]
    fn kg_data_matches_the_written_files() {
        let data = generate(&SynthConfig {
            num_users: 5,
            num_items: 12,
            num_categories: 3,
            preferred_per_user: 4,
            ..Default::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (t, r) = (dir.path().join("kg.csv"), dir.path().join("rel.txt"));
        data.write_kg(&t, &r).unwrap();
        let items = IdMap::from_ids((0..12).map(item_id).collect());
        let loaded = crate::model::load_kg_triples(&t, &r, &items).unwrap();
        assert_eq!(loaded, data.kg_data());
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = SynthConfig {
            num_users: 30,
            num_items: 40,
            ..Default::default()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
    }
}

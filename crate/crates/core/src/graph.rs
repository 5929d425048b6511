//! Mobility graphs per metro: co-visitation (one edge unit per user who
//! reviewed in both neighborhoods in a year) and residential moves, plus
//! the summary metrics reported for each network.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::{CsvOut, Establishment, MoveRecord, VisitEvent};
use crate::model::{Neighborhood, NeighborhoodId};

pub type Edge = (NeighborhoodId, NeighborhoodId);

#[derive(Debug, Clone, PartialEq)]
pub struct MobilityGraph {
    pub metro: String,
    pub year: i32,
    pub directed: bool,
    /// Undirected graphs key each pair once with `n1 < n2`; directed graphs
    /// key (origin, destination).
    pub edges: BTreeMap<Edge, u64>,
    /// Neighborhoods with any activity in this metro and year.
    pub nodes: BTreeSet<NeighborhoodId>,
}

impl MobilityGraph {
    pub fn new(metro: impl Into<String>, year: i32, directed: bool) -> Self {
        Self {
            metro: metro.into(),
            year,
            directed,
            edges: BTreeMap::new(),
            nodes: BTreeSet::new(),
        }
    }

    /// Adds `w` to the edge, canonicalizing the key for undirected graphs.
    /// Self-loops are ignored and reported as `false`.
    pub fn add(&mut self, a: &NeighborhoodId, b: &NeighborhoodId, w: u64) -> bool {
        self.nodes.insert(a.clone());
        self.nodes.insert(b.clone());
        if a == b || w == 0 {
            return false;
        }
        let key = if self.directed || a < b {
            (a.clone(), b.clone())
        } else {
            (b.clone(), a.clone())
        };
        *self.edges.entry(key).or_insert(0) += w;
        true
    }

    pub fn total_weight(&self) -> u64 {
        self.edges.values().sum()
    }

    /// Undirected view summing both arcs of a directed graph.
    pub fn symmetrized(&self) -> MobilityGraph {
        if !self.directed {
            return self.clone();
        }
        let mut g = MobilityGraph::new(self.metro.clone(), self.year, false);
        g.nodes = self.nodes.clone();
        for ((a, b), w) in &self.edges {
            g.add(a, b, *w);
        }
        g
    }
}

fn metro_lookup(neighborhoods: &[Neighborhood]) -> BTreeMap<&NeighborhoodId, &str> {
    neighborhoods.iter().map(|n| (&n.id, n.metro.as_str())).collect()
}

/// Users with at least `min` distinct (deduplicated) reviews across the whole dataset.
pub fn active_users(events: &[VisitEvent], min: usize) -> BTreeSet<&str> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for e in events {
        *counts.entry(e.user_id.as_str()).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .filter(|(_, c)| *c >= min)
        .map(|(u, _)| u)
        .collect()
}

/// Annual co-visitation graphs, one per metro with any activity in `year`.
///
/// Only users with ≥ 2 reviews overall are considered. Within a metro each
/// user contributes exactly 1 to every unordered pair of distinct
/// neighborhoods they reviewed in during `year`.
pub fn build_covisitation(
    events: &[VisitEvent],
    establishments: &[Establishment],
    neighborhoods: &[Neighborhood],
    year: i32,
) -> Result<Vec<MobilityGraph>> {
    let metros = metro_lookup(neighborhoods);
    let mut est_metro: BTreeMap<&str, (&NeighborhoodId, &str)> = BTreeMap::new();
    for e in establishments {
        let metro = metros.get(&e.neighborhood).ok_or_else(|| {
            Error::Data(format!(
                "establishment {} references unknown neighborhood {}",
                e.id, e.neighborhood
            ))
        })?;
        est_metro.insert(&e.id, (&e.neighborhood, metro));
    }
    let users = active_users(events, 2);

    // (metro, user) -> distinct neighborhoods this year
    let mut sets: BTreeMap<(&str, &str), BTreeSet<&NeighborhoodId>> = BTreeMap::new();
    for e in events.iter().filter(|e| e.year == year) {
        if !users.contains(e.user_id.as_str()) {
            continue;
        }
        let (hood, metro) = est_metro.get(e.establishment_id.as_str()).ok_or_else(|| {
            Error::Data(format!(
                "event references unknown establishment {}",
                e.establishment_id
            ))
        })?;
        sets.entry((metro, &e.user_id)).or_default().insert(hood);
    }

    let mut graphs: BTreeMap<&str, MobilityGraph> = BTreeMap::new();
    for ((metro, _user), hoods) in sets {
        let g = graphs
            .entry(metro)
            .or_insert_with(|| MobilityGraph::new(metro, year, false));
        let hoods: Vec<&NeighborhoodId> = hoods.into_iter().collect();
        for h in &hoods {
            g.nodes.insert((*h).clone());
        }
        for i in 0..hoods.len() {
            for j in i + 1..hoods.len() {
                g.add(hoods[i], hoods[j], 1);
            }
        }
    }
    Ok(graphs.into_values().collect())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MoveTally {
    pub self_loops: u64,
    pub cross_metro: u64,
    pub other_years: usize,
}

/// Move graphs for one census year, one per metro. Moves whose endpoints
/// lie in different metros are not part of any within-metro network.
pub fn build_move_graph(
    moves: &[MoveRecord],
    neighborhoods: &[Neighborhood],
    census_year: i32,
    directed: bool,
) -> Result<(Vec<MobilityGraph>, MoveTally)> {
    let metros = metro_lookup(neighborhoods);
    let mut tally = MoveTally::default();
    let mut graphs: BTreeMap<&str, MobilityGraph> = BTreeMap::new();
    for m in moves {
        if m.census_year != census_year {
            tally.other_years += 1;
            continue;
        }
        let lookup = |id: &NeighborhoodId| {
            metros
                .get(id)
                .copied()
                .ok_or_else(|| Error::Data(format!("move references unknown neighborhood {id}")))
        };
        let (mo, md) = (lookup(&m.origin)?, lookup(&m.destination)?);
        if mo != md {
            tally.cross_metro += m.count;
            continue;
        }
        let g = graphs
            .entry(mo)
            .or_insert_with(|| MobilityGraph::new(mo, census_year, directed));
        if !g.add(&m.origin, &m.destination, m.count) {
            tally.self_loops += m.count;
        }
    }
    Ok((graphs.into_values().collect(), tally))
}

/// Keeps graphs with at least `min_nodes` nodes.
pub fn filter_metros(graphs: Vec<MobilityGraph>, min_nodes: usize) -> Vec<MobilityGraph> {
    graphs
        .into_iter()
        .filter(|g| g.nodes.len() >= min_nodes)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GraphMetrics {
    pub edge_count: usize,
    pub avg_weighted_degree: f64,
    pub avg_edge_weight: f64,
    pub weighted_clustering: f64,
}

/// Edge count, mean node strength, mean edge weight and mean Barrat
/// weighted clustering. Directed graphs are symmetrized first; an empty
/// graph yields all zeros.
pub fn graph_metrics(graph: &MobilityGraph) -> GraphMetrics {
    let g = graph.symmetrized();
    if g.nodes.is_empty() {
        return GraphMetrics::default();
    }
    let adj = adjacency(&g);
    let strength = |n: &NeighborhoodId| -> f64 {
        adj.get(n).map(|m| m.values().sum::<u64>() as f64).unwrap_or(0.0)
    };
    let total_strength: f64 = g.nodes.iter().map(strength).sum();
    let edge_count = g.edges.len();
    let avg_edge_weight = if edge_count == 0 {
        0.0
    } else {
        g.total_weight() as f64 / edge_count as f64
    };
    let clustering: f64 = g
        .nodes
        .iter()
        .map(|n| barrat_local(&adj, n))
        .sum::<f64>()
        / g.nodes.len() as f64;
    GraphMetrics {
        edge_count,
        avg_weighted_degree: total_strength / g.nodes.len() as f64,
        avg_edge_weight,
        weighted_clustering: clustering,
    }
}

type Adjacency<'a> = BTreeMap<&'a NeighborhoodId, BTreeMap<&'a NeighborhoodId, u64>>;

fn adjacency(g: &MobilityGraph) -> Adjacency<'_> {
    let mut adj: Adjacency = BTreeMap::new();
    for ((a, b), w) in &g.edges {
        adj.entry(a).or_default().insert(b, *w);
        adj.entry(b).or_default().insert(a, *w);
    }
    adj
}

/// Barrat et al.: `C_i = Σ_{j≠h} (w_ij + w_ih)/2 · a_jh / (s_i (k_i − 1))`
/// over ordered neighbour pairs; 0 when k_i < 2.
fn barrat_local(adj: &Adjacency<'_>, node: &NeighborhoodId) -> f64 {
    let Some(nbrs) = adj.get(node) else {
        return 0.0;
    };
    let k = nbrs.len();
    if k < 2 {
        return 0.0;
    }
    let s: f64 = nbrs.values().sum::<u64>() as f64;
    let list: Vec<(&&NeighborhoodId, &u64)> = nbrs.iter().collect();
    let mut acc = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            let (a, wa) = list[i];
            let (b, wb) = list[j];
            if adj[*a].contains_key(*b) {
                // counts both (a, b) and (b, a)
                acc += (*wa + *wb) as f64;
            }
        }
    }
    acc / (s * (k - 1) as f64)
}

pub fn write_graphs(path: &Path, graphs: &[MobilityGraph]) -> Result<()> {
    let mut w = CsvOut::create(path, &["metro", "year", "directed", "n1", "n2", "weight"])?;
    for g in graphs {
        for ((a, b), weight) in &g.edges {
            w.row([
                g.metro.clone(),
                g.year.to_string(),
                g.directed.to_string(),
                a.to_string(),
                b.to_string(),
                weight.to_string(),
            ])?;
        }
    }
    w.finish()
}

pub fn write_metrics(path: &Path, graphs: &[MobilityGraph]) -> Result<()> {
    let mut w = CsvOut::create(
        path,
        &[
            "metro",
            "year",
            "edge_count",
            "avg_weighted_degree",
            "avg_edge_weight",
            "weighted_clustering",
        ],
    )?;
    for g in graphs {
        let m = graph_metrics(g);
        w.row([
            g.metro.clone(),
            g.year.to_string(),
            m.edge_count.to_string(),
            format!("{}", m.avg_weighted_degree),
            format!("{}", m.avg_edge_weight),
            format!("{}", m.weighted_clustering),
        ])?;
    }
    w.finish()
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn id(s: &str) -> NeighborhoodId {
        NeighborhoodId::new(s).unwrap()
    }

    fn hood(code: &str, metro: &str) -> Neighborhood {
        Neighborhood {
            id: id(code),
            metro: metro.into(),
            centroid_lat: 0.0,
            centroid_lon: 0.0,
            land_area: 1.0,
        }
    }

    fn est(e: &str, z: &str) -> Establishment {
        Establishment {
            id: e.into(),
            neighborhood: id(z),
            categories: vec!["cafe".into()],
            first_review_year: 2015,
            last_review_year: 2021,
        }
    }

    fn ev(u: &str, e: &str, y: i32) -> VisitEvent {
        VisitEvent {
            user_id: u.into(),
            establishment_id: e.into(),
            year: y,
        }
    }

    fn fixture() -> (Vec<Establishment>, Vec<Neighborhood>) {
        (
            vec![est("e1", "Z1"), est("e2", "Z2"), est("e3", "Z1"), est("e4", "Z1")],
            vec![hood("Z1", "M"), hood("Z2", "M")],
        )
    }

    #[test]
    fn covisitation_examples() {
        let (ests, hoods) = fixture();
        let g = build_covisitation(&[ev("u1", "e1", 2018), ev("u1", "e2", 2018)], &ests, &hoods, 2018).unwrap();
        assert_eq!(g[0].edges[&(id("Z1"), id("Z2"))], 1);

        let events = [
            ev("u1", "e1", 2018),
            ev("u1", "e2", 2018),
            ev("u2", "e2", 2018),
            ev("u2", "e3", 2018),
            ev("u2", "e4", 2018),
        ];
        let g = build_covisitation(&events, &ests, &hoods, 2018).unwrap();
        assert_eq!(g[0].edges[&(id("Z1"), id("Z2"))], 2);

        let g = build_covisitation(&[ev("u1", "e1", 2018), ev("u1", "e3", 2018), ev("u1", "e4", 2018)], &ests, &hoods, 2018)
            .unwrap();
        assert!(g[0].edges.is_empty());
    }

    #[test]
    fn cross_year_reviews_do_not_link() {
        let (ests, hoods) = fixture();
        let g = build_covisitation(&[ev("u1", "e1", 2017), ev("u1", "e2", 2018)], &ests, &hoods, 2018).unwrap();
        assert!(g.iter().all(|g| g.edges.is_empty()));
    }

    #[test]
    fn unknown_neighborhood_is_error() {
        let (mut ests, hoods) = fixture();
        ests.push(est("e9", "Z9"));
        assert!(build_covisitation(&[], &ests, &hoods, 2018).is_err());
    }

    fn mv(a: &str, b: &str, c: u64) -> MoveRecord {
        MoveRecord {
            origin: id(a),
            destination: id(b),
            census_year: 2006,
            count: c,
        }
    }

    #[test]
    fn move_graph_examples() {
        let hoods = [hood("A", "M"), hood("B", "M")];
        let moves = [mv("A", "B", 10), mv("B", "A", 5), mv("A", "A", 20)];
        let (g, tally) = build_move_graph(&moves, &hoods, 2006, false).unwrap();
        assert_eq!(g[0].edges.len(), 1);
        assert_eq!(g[0].edges[&(id("A"), id("B"))], 15);
        assert_eq!(tally.self_loops, 20);
        let (g, _) = build_move_graph(&moves, &hoods, 2006, true).unwrap();
        assert_eq!(g[0].edges[&(id("A"), id("B"))], 10);
        assert_eq!(g[0].edges[&(id("B"), id("A"))], 5);
    }

    #[test]
    fn metro_filter_boundary() {
        let mk = |n: usize| {
            let mut g = MobilityGraph::new(format!("M{n}"), 2006, false);
            for i in 0..n {
                g.nodes.insert(id(&format!("N{i}")));
            }
            g
        };
        let kept = filter_metros(vec![mk(9), mk(10)], 10);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].nodes.len(), 10);
        assert_eq!(filter_metros(vec![mk(1), mk(3)], 1).len(), 2);
    }

    fn triangle(ab: u64, ac: u64, bc: u64) -> MobilityGraph {
        let mut g = MobilityGraph::new("M", 2018, false);
        g.add(&id("A"), &id("B"), ab);
        g.add(&id("A"), &id("C"), ac);
        g.add(&id("B"), &id("C"), bc);
        g
    }

    #[test]
    fn metrics_unit_triangle_and_path() {
        let m = graph_metrics(&triangle(1, 1, 1));
        assert_eq!(m, GraphMetrics { edge_count: 3, avg_weighted_degree: 2.0, avg_edge_weight: 1.0, weighted_clustering: 1.0 });

        let mut p = MobilityGraph::new("M", 2018, false);
        p.add(&id("A"), &id("B"), 1);
        p.add(&id("B"), &id("C"), 1);
        let m = graph_metrics(&p);
        assert_eq!(m.edge_count, 2);
        assert!((m.avg_weighted_degree - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.avg_edge_weight, 1.0);
        assert_eq!(m.weighted_clustering, 0.0);
        assert_eq!(graph_metrics(&MobilityGraph::new("M", 2018, false)), GraphMetrics::default());
    }

    #[test]
    fn weighted_triangle_matches_enumeration_oracle() {
        // The ordered-pair sum makes every node of a closed triangle score 1.
        let g = triangle(3, 1, 1);
        let oracle_value = oracle::barrat_mean(&g);
        assert_eq!(oracle_value, 1.0);
        assert_eq!(graph_metrics(&g).weighted_clustering, oracle_value);
    }

    #[test]
    fn directed_metrics_use_symmetrized_weights() {
        let hoods = [hood("A", "M"), hood("B", "M")];
        let (g, _) = build_move_graph(&[mv("A", "B", 10), mv("B", "A", 5)], &hoods, 2006, true).unwrap();
        let m = graph_metrics(&g[0]);
        assert_eq!(m.edge_count, 1);
        assert_eq!(m.avg_edge_weight, 15.0);
    }

    fn arb_graph() -> impl Strategy<Value = MobilityGraph> {
        proptest::collection::vec((0u8..8, 0u8..8, 1u64..20), 0..30).prop_map(|es| {
            let mut g = MobilityGraph::new("M", 2018, false);
            for (a, b, w) in es {
                g.add(&id(&format!("N{a}")), &id(&format!("N{b}")), w);
            }
            g
        })
    }

    proptest! {
        #[test]
        fn clustering_in_unit_interval_and_matches_oracle(g in arb_graph()) {
            let m = graph_metrics(&g);
            prop_assert!((0.0..=1.0).contains(&m.weighted_clustering));
            prop_assert!((m.weighted_clustering - oracle::barrat_mean(&g)).abs() < 1e-12);
        }

        #[test]
        fn covisitation_is_order_independent(
            picks in proptest::collection::vec((0u8..5, 0usize..4), 1..25),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let (ests, hoods) = fixture();
            let events: Vec<_> = picks.iter().map(|(u, e)| ev(&format!("u{u}"), &format!("e{}", e + 1), 2018)).collect();
            let mut shuffled = events.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(
                build_covisitation(&events, &ests, &hoods, 2018).unwrap(),
                build_covisitation(&shuffled, &ests, &hoods, 2018).unwrap()
            );
        }

        #[test]
        fn undirected_move_weight_is_conserved(
            moves in proptest::collection::vec((0u8..6, 0u8..6, 1u64..100), 0..40),
        ) {
            let hoods: Vec<_> = (0..6).map(|i| hood(&format!("N{i}"), "M")).collect();
            let recs: Vec<_> = moves.iter().map(|(a, b, c)| mv(&format!("N{a}"), &format!("N{b}"), *c)).collect();
            let total: u64 = recs.iter().map(|m| m.count).sum();
            let loops: u64 = recs.iter().filter(|m| m.origin == m.destination).map(|m| m.count).sum();
            let (g, tally) = build_move_graph(&recs, &hoods, 2006, false).unwrap();
            let kept: u64 = g.iter().map(|g| g.total_weight()).sum();
            prop_assert_eq!(kept, total - loops);
            prop_assert_eq!(tally.self_loops, loops);
        }
    }
}

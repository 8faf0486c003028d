//! Histogram gradient boosting for binary logistic loss.
//!
//! Each feature is discretised once, on the training set, into at most
//! `n_bins` bins whose upper edges are observed training values. A split sends
//! `x <= threshold` left. Because thresholds are data values, any strictly
//! increasing transform of a column (applied to train and scoring data alike)
//! produces the same partition of rows and hence the same model output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Margins are clamped here before the sigmoid so scores stay inside (0, 1).
const MAX_MARGIN: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbmConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_child_weight: f64,
    pub l2_reg: f64,
    pub subsample: f64,
    pub n_bins: usize,
    pub seed: u64,
}

impl Default for GbmConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 4,
            learning_rate: 0.1,
            min_child_weight: 5.0,
            l2_reg: 1.0,
            subsample: 1.0,
            n_bins: 64,
            seed: 7,
        }
    }
}

impl GbmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("gbm {what}")));
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.min_child_weight > 0.0) {
            return bad("min_child_weight must be positive");
        }
        if !(self.l2_reg > 0.0) {
            return bad("l2_reg must be positive");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        if self.n_bins < 2 {
            return bad("n_bins must be at least 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        /// Index of the cut within the feature's bin edges.
        bin: usize,
        threshold: f64,
        gain: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        /// Log-odds contribution, learning rate included.
        value: f64,
    },
}

/// Flat tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gbm {
    pub n_features: usize,
    pub base_score: f64,
    pub trees: Vec<Tree>,
    /// Per-feature sum of split gains.
    pub total_gain: Vec<f64>,
    pub split_count: Vec<usize>,
}

pub fn sigmoid(margin: f64) -> f64 {
    let m = margin.clamp(-MAX_MARGIN, MAX_MARGIN);
    1.0 / (1.0 + (-m).exp())
}

impl Gbm {
    pub fn margin(&self, row: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    pub fn predict(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
        if matrix.n_cols() != self.n_features {
            return Err(Error::Shape {
                expected: self.n_features,
                got: matrix.n_cols(),
            });
        }
        Ok((0..matrix.n_rows())
            .into_par_iter()
            .map(|i| sigmoid(self.margin(matrix.row(i))))
            .collect())
    }

    /// Total gain per feature, normalised to sum to one; all zeros when no split exists.
    pub fn gain_share(&self) -> Vec<f64> {
        normalise(&self.total_gain)
    }

    /// Mean gain per split for each feature, normalised to sum to one.
    pub fn average_gain_share(&self) -> Vec<f64> {
        let avg: Vec<f64> = self
            .total_gain
            .iter()
            .zip(&self.split_count)
            .map(|(g, &c)| if c == 0 { 0.0 } else { g / c as f64 })
            .collect();
        normalise(&avg)
    }
}

fn normalise(v: &[f64]) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.iter().map(|g| g / total).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// Upper bin edges for one column: observed values at evenly spaced ranks,
/// deduplicated, with the column maximum dropped (it would split nothing off).
pub fn bin_edges(column: &[f64], n_bins: usize) -> Vec<f64> {
    let mut sorted = column.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut edges = if sorted.len() <= n_bins {
        sorted
    } else {
        let mut all = column.to_vec();
        all.sort_by(f64::total_cmp);
        let n = all.len();
        let mut e: Vec<f64> = (1..n_bins).map(|k| all[k * n / n_bins - 1]).collect();
        e.dedup();
        e
    };
    if let (Some(&last), Some(&max)) = (edges.last(), column.iter().max_by(|a, b| a.total_cmp(b))) {
        if last >= max {
            edges.pop();
        }
    }
    edges
}

fn bin_of(edges: &[f64], x: f64) -> u16 {
    edges.partition_point(|&e| e < x) as u16
}

struct Binned {
    /// Column-major bin indices.
    bins: Vec<Vec<u16>>,
    edges: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Default)]
struct GradPair {
    g: f64,
    h: f64,
}

struct SplitCandidate {
    feature: usize,
    bin: usize,
    gain: f64,
}

struct Trainer<'a> {
    cfg: &'a GbmConfig,
    data: &'a Binned,
}

impl Trainer<'_> {
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.cfg.l2_reg)
    }

    fn best_split(&self, rows: &[usize], grad: &[GradPair]) -> Option<SplitCandidate> {
        let (g_tot, h_tot) = rows
            .iter()
            .fold((0.0, 0.0), |(g, h), &i| (g + grad[i].g, h + grad[i].h));
        let parent = self.score(g_tot, h_tot);
        let per_feature: Vec<Option<SplitCandidate>> = (0..self.data.bins.len())
            .into_par_iter()
            .map(|f| {
                let n_edges = self.data.edges[f].len();
                if n_edges == 0 {
                    return None;
                }
                let mut hist = vec![GradPair::default(); n_edges + 1];
                let col = &self.data.bins[f];
                for &i in rows {
                    let b = &mut hist[col[i] as usize];
                    b.g += grad[i].g;
                    b.h += grad[i].h;
                }
                let mut best: Option<SplitCandidate> = None;
                let (mut gl, mut hl) = (0.0, 0.0);
                for (bin, pair) in hist.iter().enumerate().take(n_edges) {
                    gl += pair.g;
                    hl += pair.h;
                    let (gr, hr) = (g_tot - gl, h_tot - hl);
                    if hl < self.cfg.min_child_weight || hr < self.cfg.min_child_weight {
                        continue;
                    }
                    let gain = 0.5 * (self.score(gl, hl) + self.score(gr, hr) - parent);
                    if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                        best = Some(SplitCandidate { feature: f, bin, gain });
                    }
                }
                best
            })
            .collect();
        per_feature
            .into_iter()
            .flatten()
            .fold(None, |acc: Option<SplitCandidate>, c| match acc {
                Some(a) if a.gain >= c.gain => Some(a),
                _ => Some(c),
            })
    }

    fn grow(
        &self,
        rows: Vec<usize>,
        grad: &[GradPair],
        depth: usize,
        nodes: &mut Vec<Node>,
        gains: &mut Vec<(usize, f64)>,
    ) -> usize {
        let id = nodes.len();
        nodes.push(Node::Leaf { value: 0.0 });
        let split = if depth < self.cfg.max_depth {
            self.best_split(&rows, grad)
        } else {
            None
        };
        match split {
            None => {
                let (g, h) = rows
                    .iter()
                    .fold((0.0, 0.0), |(g, h), &i| (g + grad[i].g, h + grad[i].h));
                nodes[id] = Node::Leaf {
                    value: -g / (h + self.cfg.l2_reg) * self.cfg.learning_rate,
                };
            }
            Some(s) => {
                let col = &self.data.bins[s.feature];
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&i| col[i] as usize <= s.bin);
                gains.push((s.feature, s.gain));
                let left = self.grow(left_rows, grad, depth + 1, nodes, gains);
                let right = self.grow(right_rows, grad, depth + 1, nodes, gains);
                nodes[id] = Node::Split {
                    feature: s.feature,
                    bin: s.bin,
                    threshold: self.data.edges[s.feature][s.bin],
                    gain: s.gain,
                    left,
                    right,
                };
            }
        }
        id
    }
}

/// Row permutation that sorts rows by their values, then label. Training on
/// this order makes every floating-point reduction independent of the input
/// row order.
fn canonical_order(matrix: &FeatureMatrix) -> Vec<usize> {
    let mut order: Vec<usize> = (0..matrix.n_rows()).collect();
    order.sort_by(|&a, &b| {
        matrix
            .row(a)
            .iter()
            .zip(matrix.row(b))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(matrix.labels()[a].cmp(&matrix.labels()[b]))
    });
    order
}

pub(crate) fn check_labels(labels: &[u8]) -> Result<f64> {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::DegenerateLabels(format!(
            "{pos} positives among {} training rows",
            labels.len()
        )));
    }
    Ok(pos as f64 / labels.len() as f64)
}

pub fn log_loss(labels: &[u8], scores: &[f64]) -> f64 {
    let total: f64 = labels
        .iter()
        .zip(scores)
        .map(|(&y, &p)| if y == 1 { -p.ln() } else { -(1.0 - p).ln() })
        .sum();
    total / labels.len() as f64
}

/// Per-round training log loss is reported through `on_round` when given.
pub fn train_gbm_with(
    train: &FeatureMatrix,
    cfg: &GbmConfig,
    mut on_round: Option<&mut dyn FnMut(usize, f64)>,
) -> Result<Gbm> {
    cfg.validate()?;
    let rate = check_labels(train.labels())?;
    let order = canonical_order(train);
    let x = train.select(&order);
    let y = x.labels();
    let n = x.n_rows();
    let p = x.n_cols();

    let edges: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|j| bin_edges(&x.column(j), cfg.n_bins))
        .collect();
    let bins: Vec<Vec<u16>> = (0..p)
        .into_par_iter()
        .map(|j| x.column(j).iter().map(|&v| bin_of(&edges[j], v)).collect())
        .collect();
    let data = Binned { bins, edges };
    let trainer = Trainer { cfg, data: &data };

    let base_score = (rate / (1.0 - rate)).ln();
    let mut margins = vec![base_score; n];
    let mut model = Gbm {
        n_features: p,
        base_score,
        trees: Vec::with_capacity(cfg.n_trees),
        total_gain: vec![0.0; p],
        split_count: vec![0; p],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    for round in 0..cfg.n_trees {
        let grad: Vec<GradPair> = margins
            .iter()
            .zip(y)
            .map(|(&m, &yi)| {
                let prob = sigmoid(m);
                GradPair {
                    g: prob - f64::from(yi),
                    h: (prob * (1.0 - prob)).max(1e-16),
                }
            })
            .collect();
        let rows: Vec<usize> = if cfg.subsample < 1.0 {
            (0..n).filter(|_| rng.random::<f64>() < cfg.subsample).collect()
        } else {
            (0..n).collect()
        };
        let mut nodes = Vec::new();
        let mut gains = Vec::new();
        trainer.grow(rows, &grad, 0, &mut nodes, &mut gains);
        let tree = Tree { nodes };
        for (f, g) in gains {
            model.total_gain[f] += g;
            model.split_count[f] += 1;
        }
        for (i, m) in margins.iter_mut().enumerate() {
            *m += tree.predict_row(x.row(i));
        }
        model.trees.push(tree);
        if let Some(cb) = on_round.as_deref_mut() {
            let scores: Vec<f64> = margins.iter().map(|&m| sigmoid(m)).collect();
            cb(round, log_loss(y, &scores));
        }
    }
    Ok(model)
}

pub fn train_gbm(train: &FeatureMatrix, cfg: &GbmConfig) -> Result<Gbm> {
    train_gbm_with(train, cfg, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::RowMeta;
    use proptest::prelude::*;
    use rand::Rng;

    fn meta(n: usize) -> Vec<RowMeta> {
        (0..n)
            .map(|i| RowMeta {
                event_key: format!("I|{i}|2024-01-01").parse().unwrap(),
                disclosure_date: "2024-01-01".parse().unwrap(),
            })
            .collect()
    }

    pub(crate) fn matrix(rows: &[Vec<f64>], labels: &[u8]) -> FeatureMatrix {
        let p = rows[0].len();
        FeatureMatrix::new(
            (0..p).map(|j| format!("x{j}")).collect(),
            rows.iter().flatten().copied().collect(),
            labels.to_vec(),
            meta(labels.len()),
        )
        .unwrap()
    }

    fn toy(n: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let labels: Vec<u8> = rows.iter().map(|r| u8::from(r[0] + 0.5 * r[1] * r[1] > 0.2)).collect();
        matrix(&rows, &labels)
    }

    #[test]
    fn edges_are_observed_values_without_the_max() {
        assert_eq!(bin_edges(&[3.0, 1.0, 2.0, 2.0], 64), vec![1.0, 2.0]);
        assert!(bin_edges(&[5.0; 10], 64).is_empty());
        let col: Vec<f64> = (0..1000).map(f64::from).collect();
        let e = bin_edges(&col, 4);
        assert_eq!(e, vec![249.0, 499.0, 749.0]);
        assert_eq!(bin_of(&e, 249.0), 0);
        assert_eq!(bin_of(&e, 249.5), 1);
        assert_eq!(bin_of(&e, 1e9), 3);
    }

    #[test]
    fn zero_trees_predict_the_base_rate() {
        let m = toy(200, 1);
        let rate = m.labels().iter().map(|&y| f64::from(y)).sum::<f64>() / 200.0;
        let model = train_gbm(
            &m,
            &GbmConfig {
                n_trees: 0,
                ..Default::default()
            },
        )
        .unwrap();
        for s in model.predict(&m).unwrap() {
            assert!((s - rate).abs() < 1e-12);
        }
        assert!(model.gain_share().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn degenerate_labels_are_rejected() {
        let m = matrix(&[vec![1.0], vec![2.0]], &[1, 1]);
        assert!(matches!(
            train_gbm(&m, &GbmConfig::default()),
            Err(Error::DegenerateLabels(_))
        ));
    }

    #[test]
    fn unsplittable_data_gives_a_base_only_ensemble() {
        let m = matrix(&[vec![1.0], vec![1.0], vec![1.0], vec![1.0]], &[1, 0, 1, 0]);
        let model = train_gbm(
            &m,
            &GbmConfig {
                n_trees: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(model.trees.iter().all(|t| t.nodes.len() == 1));
        assert!(model.predict(&m).unwrap().iter().all(|&s| (s - 0.5).abs() < 1e-12));
    }

    #[test]
    fn shape_mismatch() {
        let model = train_gbm(
            &toy(100, 2),
            &GbmConfig {
                n_trees: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let wrong = matrix(&[vec![0.0, 1.0]], &[0]);
        assert!(matches!(
            model.predict(&wrong),
            Err(Error::Shape { expected: 3, got: 2 })
        ));
        let empty = FeatureMatrix::new(vec!["a".into(), "b".into(), "c".into()], vec![], vec![], vec![]).unwrap();
        assert!(model.predict(&empty).unwrap().is_empty());
    }

    #[test]
    fn training_is_bit_reproducible() {
        let m = toy(500, 3);
        let cfg = GbmConfig {
            n_trees: 30,
            subsample: 0.7,
            ..Default::default()
        };
        assert_eq!(train_gbm(&m, &cfg).unwrap(), train_gbm(&m, &cfg).unwrap());
    }

    #[test]
    fn thread_count_does_not_change_the_model() {
        let m = toy(500, 4);
        let cfg = GbmConfig {
            n_trees: 20,
            ..Default::default()
        };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| train_gbm(&m, &cfg)).unwrap();
        let b = four.install(|| train_gbm(&m, &cfg)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loss_decreases_every_round() {
        let m = toy(600, 5);
        let mut losses = Vec::new();
        let mut record = |_: usize, l: f64| losses.push(l);
        train_gbm_with(
            &m,
            &GbmConfig {
                n_trees: 50,
                ..Default::default()
            },
            Some(&mut record),
        )
        .unwrap();
        assert!(losses.windows(2).all(|w| w[1] <= w[0]), "{losses:?}");
    }

    #[test]
    fn trees_respect_max_depth() {
        let model = train_gbm(
            &toy(800, 6),
            &GbmConfig {
                n_trees: 10,
                max_depth: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(model.trees.iter().all(|t| t.depth() <= 2));
    }

    #[test]
    fn long_training_separates_a_deterministic_rule() {
        let m = toy(400, 7);
        let model = train_gbm(
            &m,
            &GbmConfig {
                n_trees: 300,
                min_child_weight: 0.5,
                ..Default::default()
            },
        )
        .unwrap();
        let scores = model.predict(&m).unwrap();
        let auc = crate::evaluate::auc(&scores, m.labels()).unwrap();
        assert!(auc > 0.999, "{auc}");
    }

    #[test]
    fn single_feature_model_puts_all_gain_there() {
        let rows: Vec<Vec<f64>> = (0..200).map(|i| vec![7.0, f64::from(i), 3.0]).collect();
        let labels: Vec<u8> = (0..200).map(|i| u8::from(i >= 120)).collect();
        let model = train_gbm(
            &matrix(&rows, &labels),
            &GbmConfig {
                n_trees: 5,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(model.gain_share(), vec![0.0, 1.0, 0.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn scores_stay_inside_the_unit_interval(seed in 0u64..100, scale in 1.0f64..1e6) {
            let mut m = toy(200, seed);
            m.map_column(0, |v| v * scale);
            let model = train_gbm(&m, &GbmConfig { n_trees: 40, learning_rate: 1.0, min_child_weight: 0.01, l2_reg: 1e-6, ..Default::default() }).unwrap();
            for s in model.predict(&m).unwrap() {
                prop_assert!(s > 0.0 && s < 1.0);
            }
        }

        #[test]
        fn row_order_does_not_matter(seed in 0u64..100, shift in 1usize..199) {
            let m = toy(200, seed);
            let mut perm: Vec<usize> = (0..200).collect();
            perm.rotate_left(shift);
            perm.swap(0, 150);
            let shuffled = m.select(&perm);
            let cfg = GbmConfig { n_trees: 15, ..Default::default() };
            let a = train_gbm(&m, &cfg).unwrap();
            let b = train_gbm(&shuffled, &cfg).unwrap();
            prop_assert_eq!(a.gain_share(), b.gain_share());
            prop_assert_eq!(a.predict(&m).unwrap(), b.predict(&m).unwrap());
        }

        #[test]
        fn monotone_transforms_leave_predictions_unchanged(seed in 0u64..100, col in 0usize..3, kind in 0usize..3) {
            let train = toy(300, seed);
            let test = toy(100, seed + 1000);
            let f = move |v: f64| match kind {
                0 => v.exp(),
                1 => 3.0 * v - 11.0,
                _ => v * v * v + v,
            };
            let (mut train_t, mut test_t) = (train.clone(), test.clone());
            train_t.map_column(col, f);
            test_t.map_column(col, f);
            let cfg = GbmConfig { n_trees: 20, ..Default::default() };
            let a = train_gbm(&train, &cfg).unwrap().predict(&test).unwrap();
            let b = train_gbm(&train_t, &cfg).unwrap().predict(&test_t).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}

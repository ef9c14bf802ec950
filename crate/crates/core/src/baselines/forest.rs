//! Breiman random forest of Gini CART trees.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::Label;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub bootstrap: bool,
    /// Features tried per node; `None` means `floor(sqrt(d))`.
    pub mtry: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Keep in-bag counts so out-of-bag predictions are available.
    pub oob: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 500,
            bootstrap: true,
            mtry: None,
            max_depth: None,
            min_leaf: 1,
            oob: false,
        }
    }
}

impl ForestParams {
    pub fn mtry_for(&self, features: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| (features as f64).sqrt().floor() as usize)
            .clamp(1, features.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf { p_case: f64 },
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { p_case } => return p_case,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub seed: u64,
    /// Per tree, how often each training example was drawn.
    #[serde(skip)]
    pub in_bag: Option<Vec<Vec<u32>>>,
}

impl ForestModel {
    /// Mean of the trees' leaf case fractions.
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    /// Out-of-bag score for each training example, `None` if every tree saw it.
    pub fn oob_predictions(&self, xs: &[Vec<f64>]) -> Result<Vec<Option<f64>>> {
        let in_bag = self
            .in_bag
            .as_ref()
            .ok_or_else(|| Error::Parameter("forest was fitted without OOB tracking".into()))?;
        Ok(xs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let (sum, n) = self
                    .trees
                    .iter()
                    .zip(in_bag)
                    .filter(|(_, bag)| bag[i] == 0)
                    .fold((0.0, 0usize), |(s, n), (t, _)| (s + t.predict(x), n + 1));
                (n > 0).then(|| sum / n as f64)
            })
            .collect())
    }
}

struct Builder<'a> {
    xs: &'a [Vec<f64>],
    y: &'a [bool],
    params: &'a ForestParams,
    mtry: usize,
    nodes: Vec<Node>,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl Builder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let cases = idx.iter().filter(|&&i| self.y[i]).count();
        self.nodes.push(Node::Leaf {
            p_case: cases as f64 / idx.len() as f64,
        });
        self.nodes.len() - 1
    }

    /// Best Gini split on one feature, scored as `n_l gini_l + n_r gini_r`.
    fn best_on_feature(&self, idx: &[usize], feature: usize, buf: &mut Vec<(f64, bool)>) -> Option<SplitChoice> {
        buf.clear();
        buf.extend(idx.iter().map(|&i| (self.xs[i][feature], self.y[i])));
        buf.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = buf.len();
        let total_cases = buf.iter().filter(|p| p.1).count() as f64;
        let min_leaf = self.params.min_leaf.max(1);
        let mut left_cases = 0.0;
        let mut best: Option<SplitChoice> = None;
        for k in 0..n - 1 {
            if buf[k].1 {
                left_cases += 1.0;
            }
            let nl = k + 1;
            let nr = n - nl;
            if buf[k].0 == buf[k + 1].0 || nl < min_leaf || nr < min_leaf {
                continue;
            }
            let (nl, nr) = (nl as f64, nr as f64);
            let right_cases = total_cases - left_cases;
            let impurity = 2.0 * left_cases * (nl - left_cases) / nl
                + 2.0 * right_cases * (nr - right_cases) / nr;
            if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                let (a, b) = (buf[k].0, buf[k + 1].0);
                let mut threshold = 0.5 * (a + b);
                if threshold >= b {
                    threshold = a;
                }
                best = Some(SplitChoice {
                    feature,
                    threshold,
                    impurity,
                });
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let cases = idx.iter().filter(|&&i| self.y[i]).count();
        let pure = cases == 0 || cases == idx.len();
        let depth_capped = self.params.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || idx.len() < 2 * self.params.min_leaf.max(1) {
            return self.leaf(&idx);
        }

        let d = self.xs[0].len();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(rng);
        let mut buf = Vec::with_capacity(idx.len());
        let mut best: Option<SplitChoice> = None;
        for (tried, &f) in features.iter().enumerate() {
            // past mtry, keep looking only until some valid split exists
            if tried >= self.mtry && best.is_some() {
                break;
            }
            if let Some(c) = self.best_on_feature(&idx, f, &mut buf) {
                if best.as_ref().is_none_or(|b| c.impurity < b.impurity) {
                    best = Some(c);
                }
            }
        }
        let Some(split) = best else {
            return self.leaf(&idx);
        };

        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.xs[i][split.feature] <= split.threshold);
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf { p_case: f64::NAN });
        let left = self.grow(left_idx, depth + 1, rng);
        let right = self.grow(right_idx, depth + 1, rng);
        self.nodes[me] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        me
    }
}

/// Grow one unpruned CART tree on the examples listed in `sample`
/// (duplicates allowed).
pub fn grow_tree(
    xs: &[Vec<f64>],
    y: &[bool],
    sample: Vec<usize>,
    params: &ForestParams,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let mut builder = Builder {
        xs,
        y,
        params,
        mtry: params.mtry_for(xs[0].len()),
        nodes: Vec::new(),
    };
    builder.grow(sample, 0, rng);
    Tree {
        nodes: builder.nodes,
    }
}

/// Fit the forest. Tree `t` uses a generator seeded from `(seed, t)`, so
/// trees grow in parallel with a deterministic result.
pub fn rf_fit(xs: &[Vec<f64>], labels: &[Label], params: &ForestParams, seed: u64) -> Result<ForestModel> {
    if xs.len() != labels.len() || xs.is_empty() {
        return Err(Error::Parameter("forest needs matching non-empty data".into()));
    }
    let d = xs[0].len();
    if d == 0 || xs.iter().any(|x| x.len() != d) {
        return Err(Error::Shape("forest inputs must share a non-zero width".into()));
    }
    let y: Vec<bool> = labels.iter().map(|l| l.is_case()).collect();
    let cases = y.iter().filter(|&&c| c).count();
    if cases < 2 || y.len() - cases < 2 {
        return Err(Error::Parameter("forest needs at least 2 examples per class".into()));
    }
    if params.n_trees == 0 {
        return Err(Error::Parameter("forest needs at least one tree".into()));
    }
    let n = xs.len();
    let grown: Vec<(Tree, Vec<u32>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[t as u64]));
            let sample: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut counts = vec![0u32; if params.oob { n } else { 0 }];
            if params.oob {
                sample.iter().for_each(|&i| counts[i] += 1);
            }
            (grow_tree(xs, &y, sample, params, &mut rng), counts)
        })
        .collect();
    let (trees, bags): (Vec<Tree>, Vec<Vec<u32>>) = grown.into_iter().unzip();
    Ok(ForestModel {
        trees,
        n_features: d,
        seed,
        in_bag: params.oob.then_some(bags),
    })
}

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::softmax_into;
use super::tree::{Tree, TreeNode};
use super::HyperParams;
use crate::error::{Error, Result};
use crate::labeling::{HorizonSpec, RampClass};
use crate::matrix::FeatureMatrix;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A trained ensemble: `rounds[k][c]` is the tree added for class `c` in round `k`.
///
/// Class `c` scores `base_score[c] + learning_rate * sum_k rounds[k][c](x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GbrtModel {
    num_classes: usize,
    num_features: usize,
    learning_rate: f64,
    base_score: Vec<f64>,
    hyperparams: HyperParams,
    horizon: Option<HorizonSpec>,
    rounds: Vec<Vec<Tree>>,
}

/// On-disk layout. Field order is the serialization order.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    version: u32,
    num_classes: usize,
    num_features: usize,
    learning_rate: f64,
    base_score: Vec<f64>,
    hyperparams: HyperParams,
    horizon: Option<HorizonSpec>,
    rounds: Vec<Vec<Tree>>,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

impl GbrtModel {
    pub fn from_parts(
        num_classes: usize,
        num_features: usize,
        base_score: Vec<f64>,
        hyperparams: HyperParams,
        rounds: Vec<Vec<Tree>>,
    ) -> Result<Self> {
        let model = GbrtModel {
            num_classes,
            num_features,
            learning_rate: hyperparams.learning_rate,
            base_score,
            hyperparams,
            horizon: None,
            rounds,
        };
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::MalformedModel(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.base_score.len() != self.num_classes {
            return bad(format!("base_score has {} entries for {} classes", self.base_score.len(), self.num_classes));
        }
        if self.base_score.iter().any(|s| !s.is_finite()) {
            return bad("base_score must be finite".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning_rate {} outside (0, 1]", self.learning_rate));
        }
        for (k, round) in self.rounds.iter().enumerate() {
            if round.len() != self.num_classes {
                return bad(format!("round {k} has {} trees, expected {}", round.len(), self.num_classes));
            }
            for tree in round {
                self.check_tree(tree).map_err(|m| Error::MalformedModel(format!("round {k}: {m}")))?;
            }
        }
        Ok(())
    }

    fn check_tree(&self, tree: &Tree) -> std::result::Result<(), String> {
        if tree.nodes.is_empty() {
            return Err("empty tree".into());
        }
        // children always come after their parent, which rules out cycles
        let mut referenced = vec![false; tree.nodes.len()];
        for (i, node) in tree.nodes.iter().enumerate() {
            match node {
                TreeNode::Leaf { weight } if !weight.is_finite() => return Err(format!("node {i}: non-finite weight")),
                TreeNode::Leaf { .. } => {}
                TreeNode::Split { feature, threshold, left, right, .. } => {
                    if *feature >= self.num_features {
                        return Err(format!("node {i}: feature {feature} out of range"));
                    }
                    if !threshold.is_finite() {
                        return Err(format!("node {i}: non-finite threshold"));
                    }
                    for &child in [left, right] {
                        if child <= i || child >= tree.nodes.len() || referenced[child] {
                            return Err(format!("node {i}: invalid child index {child}"));
                        }
                        referenced[child] = true;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn base_score(&self) -> &[f64] {
        &self.base_score
    }

    pub fn hyperparams(&self) -> &HyperParams {
        &self.hyperparams
    }

    pub fn rounds(&self) -> &[Vec<Tree>] {
        &self.rounds
    }

    pub fn horizon(&self) -> Option<HorizonSpec> {
        self.horizon
    }

    pub fn with_horizon(mut self, horizon: HorizonSpec) -> Self {
        self.horizon = Some(horizon);
        self
    }

    /// The model made of the first `rounds` boosting rounds.
    pub fn truncated(&self, rounds: usize) -> GbrtModel {
        GbrtModel { rounds: self.rounds[..rounds.min(self.rounds.len())].to_vec(), ..self.clone() }
    }

    pub(crate) fn push_round(&mut self, trees: Vec<Tree>) {
        debug_assert_eq!(trees.len(), self.num_classes);
        self.rounds.push(trees);
    }

    pub(crate) fn empty(num_classes: usize, num_features: usize, base_score: Vec<f64>, hyperparams: HyperParams) -> Self {
        GbrtModel {
            num_classes,
            num_features,
            learning_rate: hyperparams.learning_rate,
            base_score,
            hyperparams,
            horizon: None,
            rounds: Vec::new(),
        }
    }

    fn check_width(&self, features: &FeatureMatrix) -> Result<()> {
        if features.n_cols() != self.num_features {
            return Err(Error::WidthMismatch { expected: self.num_features, actual: features.n_cols() });
        }
        Ok(())
    }

    pub(crate) fn scores_row(&self, row: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.base_score);
        for round in &self.rounds {
            for (o, tree) in out.iter_mut().zip(round) {
                *o += self.learning_rate * tree.predict_row(row);
            }
        }
    }

    /// Raw additive scores, row-major `n x C`.
    pub fn predict_scores(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        self.check_width(features)?;
        let c = self.num_classes;
        let mut out = vec![0.0; features.n_rows() * c];
        out.par_chunks_mut(c).enumerate().for_each(|(i, o)| self.scores_row(features.row(i), o));
        Ok(out)
    }

    /// Softmax of the scores; an `n x C` matrix whose rows sum to one.
    pub fn predict_proba(&self, features: &FeatureMatrix) -> Result<FeatureMatrix> {
        let mut scores = self.predict_scores(features)?;
        let c = self.num_classes;
        let mut buf = vec![0.0; c];
        for row in scores.chunks_exact_mut(c) {
            softmax_into(row, &mut buf);
            row.copy_from_slice(&buf);
        }
        FeatureMatrix::new(features.n_rows(), c, scores)
    }

    pub fn predict_class(&self, features: &FeatureMatrix) -> Result<Vec<RampClass>> {
        Ok(self.predict_proba(features)?.rows().map(argmax_class).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = Document {
            version: MODEL_FORMAT_VERSION,
            num_classes: self.num_classes,
            num_features: self.num_features,
            learning_rate: self.learning_rate,
            base_score: self.base_score.clone(),
            hyperparams: self.hyperparams,
            horizon: self.horizon,
            rounds: self.rounds.clone(),
        };
        Ok(serde_json::to_string(&doc)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: VersionProbe = serde_json::from_str(text)?;
        if probe.version != MODEL_FORMAT_VERSION {
            return Err(Error::ModelVersion { found: probe.version, expected: MODEL_FORMAT_VERSION });
        }
        let doc: Document = serde_json::from_str(text)?;
        let model = GbrtModel {
            num_classes: doc.num_classes,
            num_features: doc.num_features,
            learning_rate: doc.learning_rate,
            base_score: doc.base_score,
            hyperparams: doc.hyperparams,
            horizon: doc.horizon,
            rounds: doc.rounds,
        };
        model.check()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        GbrtModel::from_json(&text)
    }
}

/// Index of the largest probability as a class id; ties go to the lower id.
pub fn argmax_class(probs: &[f64]) -> RampClass {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    RampClass::from_index(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbrt::Direction;

    fn stump_model() -> GbrtModel {
        let split = Tree {
            nodes: vec![
                TreeNode::Split { feature: 0, threshold: 0.5, left: 1, right: 2, default_direction: Direction::Left },
                TreeNode::Leaf { weight: 0.0 },
                TreeNode::Leaf { weight: 1.0 },
            ],
        };
        let zero = Tree::leaf(0.0);
        let params = HyperParams { learning_rate: 1.0, ..HyperParams::default() };
        GbrtModel::from_parts(4, 1, vec![0.0; 4], params, vec![vec![zero.clone(), zero.clone(), zero, split]]).unwrap()
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax_class(&[0.1, 0.2, 0.3, 0.4]).id(), 4);
        assert_eq!(argmax_class(&[0.25; 4]).id(), 1);
    }

    #[test]
    fn zero_tree_model_is_uniform() {
        let m = GbrtModel::from_parts(4, 2, vec![0.0; 4], HyperParams::default(), vec![]).unwrap();
        let p = m.predict_proba(&FeatureMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap()).unwrap();
        assert!(p.as_slice().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn leaf_raises_class_probability() {
        let m = stump_model();
        let x = FeatureMatrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let p = m.predict_proba(&x).unwrap();
        assert!(p.row(0).iter().all(|&v| v == 0.25));
        assert!(p.row(1)[3] > p.row(1)[0] && p.row(1)[3] > p.row(1)[1]);
        assert_eq!(m.predict_class(&x).unwrap(), vec![RampClass::new(1), RampClass::new(4)]);
    }

    #[test]
    fn width_mismatch() {
        let x = FeatureMatrix::from_rows(&[[0.0, 1.0]]).unwrap();
        assert!(matches!(stump_model().predict_proba(&x), Err(Error::WidthMismatch { expected: 1, actual: 2 })));
    }

    #[test]
    fn json_round_trip_and_errors() {
        let m = stump_model();
        let text = m.to_json().unwrap();
        assert_eq!(GbrtModel::from_json(&text).unwrap(), m);

        assert!(matches!(GbrtModel::from_json(&text[..text.len() / 2]), Err(Error::Json(_))));
        let v2 = text.replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(GbrtModel::from_json(&v2), Err(Error::ModelVersion { found: 2, .. })));
        let bad_child = text.replacen("\"left\":1", "\"left\":0", 1);
        assert!(matches!(GbrtModel::from_json(&bad_child), Err(Error::MalformedModel(_))));
        let bad_feature = text.replacen("\"feature\":0", "\"feature\":3", 1);
        assert!(matches!(GbrtModel::from_json(&bad_feature), Err(Error::MalformedModel(_))));
    }

    #[test]
    fn rounds_must_hold_one_tree_per_class() {
        let r = GbrtModel::from_parts(4, 1, vec![0.0; 4], HyperParams::default(), vec![vec![Tree::leaf(0.0)]]);
        assert!(r.is_err());
    }
}

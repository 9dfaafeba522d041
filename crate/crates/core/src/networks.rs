//! Learnable sub-networks and their checkpoint container.
//!
//! | block | shape | output |
//! |---|---|---|
//! | view mapper, per view | `d_i -> l` | ReLU |
//! | common-subspace extractor, shared | `l -> l` | ReLU |
//! | specific extractor, per view | `d_i -> l` | ReLU |
//! | view discriminator | `l -> h_d -> v` | softmax |
//! | common prediction head | `l -> q` | sigmoid |
//! | common evidence head | `l -> h_e -> q` | ReLU (or softplus) |
//! | specific evidence head, per view | `l -> h_e -> q` | ReLU (or softplus) |
//! | attention `W^Q`, `W^K`, `W^V` | `v x v` each | - |

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Softmax,
    Softplus,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "identity" => Activation::Identity,
            "relu" => Activation::Relu,
            "sigmoid" => Activation::Sigmoid,
            "softmax" => Activation::Softmax,
            "softplus" => Activation::Softplus,
            other => return Err(Error::contract(format!("unknown activation `{other}`"))),
        })
    }
}

fn activate(g: &mut Graph, x: Var, act: Activation) -> Var {
    match act {
        Activation::Identity => x,
        Activation::Relu => g.relu(x),
        Activation::Sigmoid => g.sigmoid(x),
        Activation::Softmax => g.softmax_rows(x),
        Activation::Softplus => g.softplus(x),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width followed by every layer's output width.
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, hidden: Activation, output: Activation) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::contract(format!(
                "an MLP needs at least one layer of positive widths, got {widths:?}"
            )));
        }
        Ok(Self {
            widths,
            hidden,
            output,
        })
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Linear>,
}

fn uniform_fan_in(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::new(rows, cols, data).expect("sized by construction")
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, spec: MlpSpec, rng: &mut ChaCha8Rng) -> Self {
        let layers = spec
            .widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear {
                weight: store.add(
                    format!("{name}.{i}.weight"),
                    uniform_fan_in(rng, w[0], w[1], w[0]),
                ),
                bias: store.add(
                    format!("{name}.{i}.bias"),
                    uniform_fan_in(rng, 1, w[1], w[0]),
                ),
            })
            .collect();
        Self { spec, layers }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn input_width(&self) -> usize {
        self.spec.widths[0]
    }

    /// Forward pass. With `frozen`, weights enter the graph as constants.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, frozen: bool) -> Result<Var> {
        let [_, width] = g.shape(x);
        if width != self.input_width() {
            return Err(Error::contract(format!(
                "input width {width} does not match network input {}",
                self.input_width()
            )));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (w, b) = if frozen {
                (
                    g.constant(store.value(layer.weight).clone()),
                    g.constant(store.value(layer.bias).clone()),
                )
            } else {
                (g.param(store, layer.weight), g.param(store, layer.bias))
            };
            let z = g.matmul(h, w)?;
            let z = g.add(z, b)?;
            let act = if i == last {
                self.spec.output
            } else {
                self.spec.hidden
            };
            h = activate(g, z, act);
        }
        Ok(h)
    }
}

/// Sizes that fully determine the parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub view_dims: Vec<usize>,
    pub classes: usize,
    /// Width `l` of the shared subspace.
    pub latent: usize,
    pub head_hidden: usize,
    pub disc_hidden: usize,
    pub evidence_activation: Activation,
}

impl Architecture {
    pub fn new(view_dims: Vec<usize>, classes: usize, latent: usize) -> Self {
        Self {
            view_dims,
            classes,
            latent,
            head_hidden: 64,
            disc_hidden: 64,
            evidence_activation: Activation::Relu,
        }
    }

    pub fn views(&self) -> usize {
        self.view_dims.len()
    }

    fn validate(&self) -> Result<()> {
        if self.view_dims.is_empty() || self.view_dims.contains(&0) {
            return Err(Error::contract("every view needs a positive width"));
        }
        if self.classes < 2 || self.latent == 0 || self.head_hidden == 0 || self.disc_hidden == 0 {
            return Err(Error::contract(
                "class count must be >= 2 and widths positive",
            ));
        }
        if !matches!(
            self.evidence_activation,
            Activation::Relu | Activation::Softplus
        ) {
            return Err(Error::contract(
                "evidence activation must be relu or softplus",
            ));
        }
        Ok(())
    }

    /// Closed-form parameter count of the layout in the module table.
    pub fn param_count(&self) -> usize {
        let (l, q, v) = (self.latent, self.classes, self.views());
        let (he, hd) = (self.head_hidden, self.disc_hidden);
        let per_view_in: usize = self.view_dims.iter().map(|d| d * l + l).sum();
        2 * per_view_in
            + (l * l + l)
            + (l * hd + hd + hd * v + v)
            + (l * q + q)
            + (1 + v) * (l * he + he + he * q + q)
            + 3 * v * v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Common,
    Specific(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
}

/// Every learnable tensor of the model plus the layout that addresses it.
#[derive(Debug, Clone)]
pub struct ModelParams {
    arch: Architecture,
    seed: u64,
    pub store: ParamStore,
    mappers: Vec<Mlp>,
    common_extractor: Mlp,
    specific_extractors: Vec<Mlp>,
    discriminator: Mlp,
    common_predictor: Mlp,
    common_head: Mlp,
    specific_heads: Vec<Mlp>,
    pub attention: AttentionParams,
}

impl ModelParams {
    /// Seeded fan-in uniform initialization; attention matrices start at the
    /// identity so the first forward pass neither mixes nor negates evidence.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (l, q, v) = (arch.latent, arch.classes, arch.views());
        let relu = Activation::Relu;

        let mappers = arch
            .view_dims
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let spec = MlpSpec::new(vec![d, l], relu, relu)?;
                Ok(Mlp::new(&mut store, &format!("mapper{i}"), spec, &mut rng))
            })
            .collect::<Result<Vec<_>>>()?;
        let common_extractor = Mlp::new(
            &mut store,
            "common",
            MlpSpec::new(vec![l, l], relu, relu)?,
            &mut rng,
        );
        let specific_extractors = arch
            .view_dims
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let spec = MlpSpec::new(vec![d, l], relu, relu)?;
                Ok(Mlp::new(
                    &mut store,
                    &format!("specific{i}"),
                    spec,
                    &mut rng,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let discriminator = Mlp::new(
            &mut store,
            "discriminator",
            MlpSpec::new(vec![l, arch.disc_hidden, v], relu, Activation::Softmax)?,
            &mut rng,
        );
        let common_predictor = Mlp::new(
            &mut store,
            "predictor",
            MlpSpec::new(vec![l, q], relu, Activation::Sigmoid)?,
            &mut rng,
        );
        let head_spec = MlpSpec::new(vec![l, arch.head_hidden, q], relu, arch.evidence_activation)?;
        let common_head = Mlp::new(&mut store, "evidence_common", head_spec.clone(), &mut rng);
        let specific_heads = (0..v)
            .map(|i| {
                Mlp::new(
                    &mut store,
                    &format!("evidence{i}"),
                    head_spec.clone(),
                    &mut rng,
                )
            })
            .collect();
        let attention = AttentionParams {
            query: store.add("attention.query", Tensor::identity(v)),
            key: store.add("attention.key", Tensor::identity(v)),
            value: store.add("attention.value", Tensor::identity(v)),
        };

        Ok(Self {
            arch,
            seed,
            store,
            mappers,
            common_extractor,
            specific_extractors,
            discriminator,
            common_predictor,
            common_head,
            specific_heads,
            attention,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    fn view_index(&self, view: usize) -> Result<()> {
        if view >= self.arch.views() {
            return Err(Error::contract(format!(
                "view {view} out of range for {} views",
                self.arch.views()
            )));
        }
        Ok(())
    }

    /// Parameters owned by the view discriminator.
    pub fn discriminator_params(&self) -> Vec<ParamId> {
        self.discriminator
            .layers
            .iter()
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }

    /// `c^i = H_cse(phi^i(x^i))`.
    pub fn encode_common(&self, g: &mut Graph, x: Var, view: usize) -> Result<Var> {
        self.view_index(view)?;
        let h = self.mappers[view].forward(g, &self.store, x, false)?;
        self.common_extractor.forward(g, &self.store, h, false)
    }

    /// `s^i = H_sie(x^i)`.
    pub fn encode_specific(&self, g: &mut Graph, x: Var, view: usize) -> Result<Var> {
        self.view_index(view)?;
        self.specific_extractors[view].forward(g, &self.store, x, false)
    }

    /// Row-softmax view prediction. `frozen` keeps the discriminator's
    /// weights out of the gradient.
    pub fn discriminate(&self, g: &mut Graph, c: Var, frozen: bool) -> Result<Var> {
        self.discriminator.forward(g, &self.store, c, frozen)
    }

    /// Per-class sigmoid prediction from a common representation.
    pub fn predict_common(&self, g: &mut Graph, c: Var) -> Result<Var> {
        self.common_predictor.forward(g, &self.store, c, false)
    }

    /// Non-negative evidence from a width-`l` representation.
    pub fn evidence_head(&self, g: &mut Graph, h: Var, head: Head) -> Result<Var> {
        let net = match head {
            Head::Common => &self.common_head,
            Head::Specific(i) => {
                self.view_index(i)?;
                &self.specific_heads[i]
            }
        };
        net.forward(g, &self.store, h, false)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint::from_model(self);
        let text = serde_json::to_string_pretty(&ckpt).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        ckpt.into_model()
    }
}

pub const CHECKPOINT_FORMAT: &str = "trustmv-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk model container (JSON).
///
/// ```text
/// {
///   "format": "trustmv-checkpoint",
///   "version": 1,
///   "seed": <init seed>,
///   "arch": { "view_dims": [..], "classes": q, "latent": l,
///             "head_hidden": .., "disc_hidden": .., "evidence_activation": "relu" },
///   "params": [ { "name": "mapper0.0.weight", "shape": [rows, cols], "data": [..] }, .. ]
/// }
/// ```
///
/// `params` lists every tensor in layout order with row-major data. Loading
/// rebuilds the layout from `arch` and requires names and shapes to match.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub arch: Architecture,
    pub params: Vec<CheckpointTensor>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl Checkpoint {
    pub fn from_model(model: &ModelParams) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            seed: model.seed,
            arch: model.arch.clone(),
            params: model
                .store
                .iter()
                .map(|(_, p)| CheckpointTensor {
                    name: p.name.clone(),
                    shape: p.value.shape(),
                    data: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn into_model(self) -> Result<ModelParams> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Serde(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let mut model = ModelParams::new(self.arch, self.seed)?;
        if model.store.len() != self.params.len() {
            return Err(Error::Serde(format!(
                "checkpoint has {} tensors, layout expects {}",
                self.params.len(),
                model.store.len()
            )));
        }
        let ids: Vec<ParamId> = model.store.iter().map(|(id, _)| id).collect();
        for (id, t) in ids.into_iter().zip(self.params) {
            let expected = &model.store.get(id).name;
            if *expected != t.name {
                return Err(Error::Serde(format!(
                    "tensor `{}` found where `{expected}` was expected",
                    t.name
                )));
            }
            let value = Tensor::new(t.shape[0], t.shape[1], t.data)?;
            model.store.set_value(id, value)?;
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelParams {
        let mut arch = Architecture::new(vec![3, 5], 3, 4);
        arch.head_hidden = 6;
        arch.disc_hidden = 5;
        ModelParams::new(arch, 11).unwrap()
    }

    fn run(
        model: &ModelParams,
        f: impl Fn(&ModelParams, &mut Graph, Var) -> Result<Var>,
        x: Tensor,
    ) -> Tensor {
        let mut g = Graph::new();
        let xv = g.constant(x);
        let out = f(model, &mut g, xv).unwrap();
        g.value(out).clone()
    }

    #[test]
    fn param_count_matches_closed_form() {
        let m = small();
        assert_eq!(m.param_count(), m.arch().param_count());
        let big = ModelParams::new(Architecture::new(vec![20, 30, 25], 4, 64), 0).unwrap();
        assert_eq!(big.param_count(), big.arch().param_count());
        // regression constant for the default synthetic configuration
        assert_eq!(big.param_count(), 36_466);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let mut m = small();
        let ids: Vec<ParamId> = m
            .store
            .iter()
            .filter(|(_, p)| p.name.ends_with("bias"))
            .map(|(id, _)| id)
            .collect();
        for id in ids {
            let shape = m.store.value(id).shape();
            m.store
                .set_value(id, Tensor::zeros(shape[0], shape[1]))
                .unwrap();
        }
        let out = run(&m, |m, g, x| m.encode_common(g, x, 0), Tensor::zeros(2, 3));
        assert!(out.data().iter().all(|&v| v == 0.0));
        let out = run(
            &m,
            |m, g, x| m.encode_specific(g, x, 1),
            Tensor::zeros(2, 5),
        );
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_shapes_and_width_errors() {
        let m = small();
        let out = run(
            &m,
            |m, g, x| m.encode_common(g, x, 1),
            Tensor::full(7, 5, 0.3),
        );
        assert_eq!(out.shape(), [7, 4]);
        let out = run(
            &m,
            |m, g, x| m.encode_specific(g, x, 0),
            Tensor::full(7, 3, 0.3),
        );
        assert_eq!(out.shape(), [7, 4]);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(2, 4));
        assert!(matches!(
            m.encode_common(&mut g, x, 0),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            m.encode_specific(&mut g, x, 3),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn deterministic_for_seed() {
        let x = Tensor::new(2, 3, vec![0.1, -0.4, 2.0, 1.0, 0.0, -1.0]).unwrap();
        let a = run(&small(), |m, g, x| m.encode_common(g, x, 0), x.clone());
        let b = run(&small(), |m, g, x| m.encode_common(g, x, 0), x);
        assert_eq!(a, b);
    }

    #[test]
    fn head_ranges() {
        let m = small();
        let x = Tensor::new(3, 4, (0..12).map(|i| (i as f64 - 6.0) * 0.7).collect()).unwrap();
        let z = run(&m, |m, g, x| m.discriminate(g, x, false), x.clone());
        assert_eq!(z.shape(), [3, 2]);
        for r in 0..3 {
            assert!((z.row_slice(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let y = run(&m, |m, g, x| m.predict_common(g, x), x.clone());
        assert_eq!(y.shape(), [3, 3]);
        assert!(y.data().iter().all(|&p| p > 0.0 && p < 1.0));
        let e = run(&m, |m, g, x| m.evidence_head(g, x, Head::Specific(1)), x);
        assert!(e.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        let back = ModelParams::load(&path).unwrap();
        assert_eq!(back.store, m.store);
        assert_eq!(back.arch(), m.arch());
    }
}

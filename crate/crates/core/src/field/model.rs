use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{tags, CounterRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiddenSpec {
    pub width: usize,
    pub depth: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub m: usize,
    pub code_dim: usize,
    pub feature_dim: usize,
    pub template_hidden: HiddenSpec,
    /// The last deformation hidden layer has `feature_dim` units.
    pub deform_hidden: HiddenSpec,
    pub refine_hidden: HiddenSpec,
    /// One ReLU MLP per generated deformation layer.
    pub hyper_hidden: HiddenSpec,
    pub omega0: f64,
    /// Without it `s = s'`.
    pub refinement: bool,
}

impl ModelConfig {
    pub fn new(m: usize) -> Self {
        ModelConfig {
            m,
            code_dim: 128,
            feature_dim: 64,
            template_hidden: HiddenSpec { width: 128, depth: 3 },
            deform_hidden: HiddenSpec { width: 128, depth: 3 },
            refine_hidden: HiddenSpec { width: 128, depth: 2 },
            hyper_hidden: HiddenSpec { width: 256, depth: 1 },
            omega0: 30.0,
            refinement: true,
        }
    }

    /// All widths 16.
    pub fn tiny(m: usize) -> Self {
        ModelConfig {
            m,
            code_dim: 16,
            feature_dim: 16,
            template_hidden: HiddenSpec { width: 16, depth: 3 },
            deform_hidden: HiddenSpec { width: 16, depth: 3 },
            refine_hidden: HiddenSpec { width: 16, depth: 2 },
            hyper_hidden: HiddenSpec { width: 16, depth: 1 },
            omega0: 30.0,
            refinement: true,
        }
    }

    /// Desk-scale toy runs: 64-wide template, deformation and refinement
    /// networks on top of the tiny code and hyper-network sizes.
    pub fn toy(m: usize) -> Self {
        let wide = HiddenSpec { width: 64, depth: 3 };
        ModelConfig {
            template_hidden: wide,
            deform_hidden: wide,
            refine_hidden: HiddenSpec { width: 64, depth: 2 },
            ..Self::tiny(m)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.m,
            self.code_dim,
            self.feature_dim,
            self.template_hidden.width,
            self.template_hidden.depth,
            self.deform_hidden.width,
            self.deform_hidden.depth,
            self.refine_hidden.width,
            self.refine_hidden.depth,
            self.hyper_hidden.width,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !(self.omega0 > 0.0) {
            return Err(Error::Config("omega0 must be positive".into()));
        }
        Ok(())
    }

    pub fn template_dims(&self) -> Vec<usize> {
        let mut d = vec![3];
        d.extend(std::iter::repeat_n(self.template_hidden.width, self.template_hidden.depth));
        d.push(1);
        d
    }

    /// `[3, w.., feature_dim, 10]`; outputs are `r, t, delta_p, delta_s`.
    pub fn deform_dims(&self) -> Vec<usize> {
        let mut d = vec![3];
        d.extend(std::iter::repeat_n(self.deform_hidden.width, self.deform_hidden.depth - 1));
        d.push(self.feature_dim);
        d.push(DEFORM_OUT);
        d
    }

    pub fn refine_dims(&self) -> Vec<usize> {
        let mut d = vec![self.feature_dim * self.m];
        d.extend(std::iter::repeat_n(self.refine_hidden.width, self.refine_hidden.depth));
        d.push(self.m);
        d
    }

    fn hyper_dims(&self, target_in: usize, target_out: usize) -> Vec<usize> {
        let mut d = vec![self.code_dim];
        d.extend(std::iter::repeat_n(self.hyper_hidden.width, self.hyper_hidden.depth));
        d.push(target_in * target_out + target_out);
        d
    }

    /// Length of one generated deformation parameter vector.
    pub fn deform_param_count(&self) -> usize {
        self.deform_dims().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

pub const DEFORM_OUT: usize = 10;

/// Weight and bias tensor indices of one dense layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerIdx {
    pub w: usize,
    pub b: usize,
}

#[derive(Clone, Debug)]
enum InitRule {
    /// `U(-a, a)`.
    Uniform(f64),
    /// `N(0, 2 / fan_in) * gain`.
    Kaiming { fan_in: usize, gain: f64 },
    /// Flat generated layer: weights `U(-1/in, 1/in)` first, sine init later;
    /// biases `U(-1/in, 1/in)`.
    Generated { target_in: usize, target_out: usize, first: bool },
}

/// Tensor indices of every network, in a fixed order.
#[derive(Clone, Debug)]
pub struct Layout {
    pub template: Vec<Vec<LayerIdx>>,
    /// `[category][deformation layer][hyper layer]`.
    pub hyper: Vec<Vec<Vec<LayerIdx>>>,
    pub refine: Vec<LayerIdx>,
    pub names: Vec<String>,
    pub shapes: Vec<(usize, usize)>,
    rules: Vec<InitRule>,
}

fn siren_weight_bound(fan_in: usize, first: bool, omega0: f64) -> f64 {
    if first {
        1.0 / fan_in as f64
    } else {
        (6.0 / fan_in as f64).sqrt() / omega0
    }
}

impl Layout {
    pub fn new(config: &ModelConfig) -> Self {
        let mut l = Layout {
            template: Vec::new(),
            hyper: Vec::new(),
            refine: Vec::new(),
            names: Vec::new(),
            shapes: Vec::new(),
            rules: Vec::new(),
        };
        let w0 = config.omega0;
        let sine_mlp = |l: &mut Layout, prefix: &str, dims: &[usize]| -> Vec<LayerIdx> {
            dims.windows(2)
                .enumerate()
                .map(|(k, d)| {
                    let bound = siren_weight_bound(d[0], k == 0, w0);
                    let bias = 1.0 / (d[0] as f64).sqrt();
                    LayerIdx {
                        w: l.push(format!("{prefix}.{k}.weight"), (d[0], d[1]), InitRule::Uniform(bound)),
                        b: l.push(format!("{prefix}.{k}.bias"), (1, d[1]), InitRule::Uniform(bias)),
                    }
                })
                .collect()
        };
        for j in 0..config.m {
            let t = sine_mlp(&mut l, &format!("template{j}"), &config.template_dims());
            l.template.push(t);
        }
        let deform = config.deform_dims();
        for j in 0..config.m {
            let mut per_layer = Vec::new();
            for (k, d) in deform.windows(2).enumerate() {
                let hd = config.hyper_dims(d[0], d[1]);
                let last = hd.len() - 2;
                let layers = hd
                    .windows(2)
                    .enumerate()
                    .map(|(h, hw)| {
                        let prefix = format!("hyper{j}.{k}.{h}");
                        if h == last {
                            LayerIdx {
                                w: l.push(
                                    format!("{prefix}.weight"),
                                    (hw[0], hw[1]),
                                    InitRule::Kaiming {
                                        fan_in: hw[0],
                                        gain: 1e-2,
                                    },
                                ),
                                b: l.push(
                                    format!("{prefix}.bias"),
                                    (1, hw[1]),
                                    InitRule::Generated {
                                        target_in: d[0],
                                        target_out: d[1],
                                        first: k == 0,
                                    },
                                ),
                            }
                        } else {
                            LayerIdx {
                                w: l.push(
                                    format!("{prefix}.weight"),
                                    (hw[0], hw[1]),
                                    InitRule::Kaiming { fan_in: hw[0], gain: 1.0 },
                                ),
                                b: l.push(format!("{prefix}.bias"), (1, hw[1]), InitRule::Uniform(0.0)),
                            }
                        }
                    })
                    .collect();
                per_layer.push(layers);
            }
            l.hyper.push(per_layer);
        }
        l.refine = sine_mlp(&mut l, "refine", &config.refine_dims());
        l
    }

    fn push(&mut self, name: String, shape: (usize, usize), rule: InitRule) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.rules.push(rule);
        self.names.len() - 1
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Every trainable network parameter of the model.
#[derive(Clone, Debug)]
pub struct ModelState {
    pub config: ModelConfig,
    pub layout: Layout,
    pub tensors: Vec<Array2<f64>>,
}

impl ModelState {
    /// Sine-network initialization; tensor `i` draws from its own stream.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let w0 = config.omega0;
        let tensors = (0..layout.len())
            .map(|i| {
                let mut rng = CounterRng::stream(seed, &[tags::INIT, i as u64]);
                let shape = layout.shapes[i];
                match layout.rules[i] {
                    InitRule::Uniform(a) => Array2::from_shape_fn(shape, |_| rng.uniform_range(-a, a)),
                    InitRule::Kaiming { fan_in, gain } => {
                        let std = (2.0 / fan_in as f64).sqrt() * gain;
                        Array2::from_shape_fn(shape, |_| std * rng.normal())
                    }
                    InitRule::Generated {
                        target_in,
                        target_out,
                        first,
                    } => {
                        let wb = siren_weight_bound(target_in, first, w0);
                        let bb = 1.0 / target_in as f64;
                        let n_w = target_in * target_out;
                        Array2::from_shape_fn(shape, |(_, c)| {
                            let a = if c < n_w { wb } else { bb };
                            rng.uniform_range(-a, a)
                        })
                    }
                }
            })
            .collect();
        Ok(ModelState {
            config: config.clone(),
            layout,
            tensors,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Flat view of every scalar parameter, in layout order.
    pub fn flat_index(&self, mut k: usize) -> (usize, usize, usize) {
        for (i, t) in self.tensors.iter().enumerate() {
            if k < t.len() {
                let (_, c) = t.dim();
                return (i, k / c, k % c);
            }
            k -= t.len();
        }
        panic!("parameter index out of range")
    }

    /// SHA-256 of the config and all parameter bits.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for t in &self.tensors {
            for v in t.iter() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

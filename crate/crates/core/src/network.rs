//! Three-stage restoration network.
//!
//! Stages 1 and 2 are small U-shaped encoder-decoders; stage 3 runs flat
//! residual blocks at the original resolution. Each stage's encoder input is
//! its shallow features plus a hierarchical memory read (part, instance and
//! semantic level for stages 1, 2, 3 respectively) and, from stage 2 on, the
//! previous stage's fused features. A supervised attention module between
//! stages produces the per-stage restored estimate and an attention-gated
//! feature pass-through.
//!
//! Parameters live outside any graph as named f64 arrays; every forward pass
//! binds them as leaves on a fresh tape.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::memory::{self, MemoryConfig};
use crate::ops::{self, Padding};
use crate::tensor::{GradMap, Graph, Tensor};

#[allow(unused_imports)]
use crate::float::FloatExt;

/// Residual blocks in the full-resolution third stage.
pub const STAGE3_BLOCKS: usize = 4;

/// Number of stages; fixed by the architecture.
pub const STAGE_COUNT: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    /// Feature channels everywhere (also the memory channel width).
    pub base_channels: usize,
    /// Encoder levels per U-shaped stage.
    pub depth: usize,
    pub memory: MemoryConfig,
    /// Ablation switch: when false, stage inputs skip the memory terms but
    /// all parameter shapes stay identical.
    pub memory_enabled: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            base_channels: 8,
            depth: 2,
            memory: MemoryConfig::default(),
            memory_enabled: true,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be >= 1".into()));
        }
        if self.depth == 0 {
            return Err(Error::Config("depth must be >= 1".into()));
        }
        self.memory.validate()?;
        if self.memory.channels != self.base_channels {
            return Err(Error::Config(alloc::format!(
                "memory channels ({}) must equal base_channels ({})",
                self.memory.channels,
                self.base_channels
            )));
        }
        Ok(())
    }

    /// Spatial extents must be divisible by this for the U-shaped stages.
    pub fn required_divisor(&self) -> usize {
        1 << self.depth
    }
}

/// One named parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Ordered (by name) collection of all learnable arrays.
pub type ParamSet = BTreeMap<String, Param>;

/// Parameters bound as leaves on one graph.
pub struct Bound {
    tensors: BTreeMap<String, Tensor>,
}

impl Bound {
    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    /// Collect gradients per parameter name after a backward pass.
    pub fn gradients(&self, grads: &GradMap) -> BTreeMap<String, Vec<f64>> {
        let mut out = BTreeMap::new();
        for (name, t) in &self.tensors {
            if let Some(g) = grads.get(t) {
                out.insert(name.clone(), g.to_vec());
            }
        }
        out
    }
}

pub struct ForwardPass {
    /// Per-stage restored estimates; `estimates[2]` is the final output.
    pub estimates: [Tensor; STAGE_COUNT],
    /// Stage-1 shallow features before the memory read (for visualization).
    pub pre_memory: Tensor,
    /// Stage-1 encoder input after the memory read.
    pub post_memory: Tensor,
}

pub struct StageNetwork {
    pub config: NetConfig,
    pub params: ParamSet,
}

fn uniform_init(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound).collect()
}

impl StageNetwork {
    /// Fresh network with seeded initialization. Image-space heads (SAM
    /// convolutions) start at zero so every stage estimate begins as the
    /// identity mapping.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config.base_channels;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();

        let conv = |params: &mut ParamSet,
                        rng: &mut ChaCha8Rng,
                        name: &str,
                        cout: usize,
                        cin: usize,
                        k: usize,
                        zero: bool| {
            let fan_in = (cin * k * k) as f64;
            let w = if zero {
                vec![0.0; cout * cin * k * k]
            } else {
                uniform_init(rng, cout * cin * k * k, (1.0 / fan_in).sqrt())
            };
            params.insert(
                alloc::format!("{name}.w"),
                Param {
                    shape: vec![cout, cin, k, k],
                    values: w,
                },
            );
            params.insert(
                alloc::format!("{name}.b"),
                Param {
                    shape: vec![cout],
                    values: vec![0.0; cout],
                },
            );
        };

        for s in 1..=STAGE_COUNT {
            conv(&mut params, &mut rng, &alloc::format!("s{s}.shallow"), c, 3, 3, false);
            conv(&mut params, &mut rng, &alloc::format!("s{s}.sam.img"), 3, c, 3, true);
            conv(&mut params, &mut rng, &alloc::format!("s{s}.sam.mask"), c, 3, 3, true);
        }
        for s in 1..=2usize {
            for l in 0..config.depth {
                conv(&mut params, &mut rng, &alloc::format!("s{s}.enc{l}"), c, c, 3, false);
                conv(&mut params, &mut rng, &alloc::format!("s{s}.dec{l}"), c, 2 * c, 3, false);
            }
            conv(&mut params, &mut rng, &alloc::format!("s{s}.bottom"), c, c, 3, false);
            conv(&mut params, &mut rng, &alloc::format!("s{s}.sfe.dec"), c, c, 1, false);
            conv(&mut params, &mut rng, &alloc::format!("s{s}.sfe.sam"), c, c, 1, false);
        }
        for r in 0..STAGE3_BLOCKS {
            conv(&mut params, &mut rng, &alloc::format!("s3.res{r}.conv0"), c, c, 3, false);
            conv(&mut params, &mut rng, &alloc::format!("s3.res{r}.conv1"), c, c, 3, false);
        }
        conv(&mut params, &mut rng, "recon.head", 3, c, 3, false);

        let bank = memory::init_bank(&config.memory, seed ^ 0x6d65_6d6f)?;
        params.insert(
            "mem.part".into(),
            Param {
                shape: vec![config.memory.part_rows(), c],
                values: bank.part_metric,
            },
        );

        Ok(StageNetwork { config, params })
    }

    /// Bind every parameter as a differentiable leaf on `graph`.
    pub fn bind(&self, graph: &Graph) -> Bound {
        self.bind_with(graph, &BTreeMap::new())
    }

    /// Like [`bind`](Self::bind) but substituting the given tensors for the
    /// named parameters (used by gradient checks to probe one group).
    pub fn bind_with(&self, graph: &Graph, overrides: &BTreeMap<String, Tensor>) -> Bound {
        let tensors = self
            .params
            .iter()
            .map(|(name, p)| {
                let t = match overrides.get(name) {
                    Some(t) => t.clone(),
                    None => graph.leaf(&p.shape, p.values.clone()),
                };
                (name.clone(), t)
            })
            .collect();
        Bound { tensors }
    }

    fn conv_layer(
        &self,
        bound: &Bound,
        name: &str,
        x: &Tensor,
        padding: Padding,
    ) -> Result<Tensor> {
        let w = bound.get(&alloc::format!("{name}.w"));
        let b = bound.get(&alloc::format!("{name}.b"));
        ops::add_channel_bias(&ops::conv2d(x, w, padding)?, b)
    }

    fn check_extents(&self, img: &Tensor) -> Result<(usize, usize)> {
        let &[c, h, w] = img.shape() else {
            return Err(Error::DimMismatch {
                op: "forward",
                lhs: img.shape().to_vec(),
                rhs: vec![3],
            });
        };
        if c != 3 {
            return Err(Error::DimMismatch {
                op: "forward",
                lhs: img.shape().to_vec(),
                rhs: vec![3, h, w],
            });
        }
        let d = self.config.required_divisor();
        if h % d != 0 || w % d != 0 {
            return Err(Error::Config(alloc::format!(
                "spatial extents {h}x{w} must be divisible by {d} (2^depth)"
            )));
        }
        Ok((h, w))
    }

    /// One 3x3 convolution + ReLU producing the stage's query features.
    pub fn shallow_features(&self, bound: &Bound, img: &Tensor, stage: usize) -> Result<Tensor> {
        self.check_extents(img)?;
        self.check_stage(stage)?;
        Ok(ops::relu(&self.conv_layer(
            bound,
            &alloc::format!("s{stage}.shallow"),
            img,
            Padding::Zero,
        )?))
    }

    fn check_stage(&self, stage: usize) -> Result<()> {
        if !(1..=STAGE_COUNT).contains(&stage) {
            return Err(Error::Usage(alloc::format!(
                "stage index {stage} out of range 1..={STAGE_COUNT}"
            )));
        }
        Ok(())
    }

    /// Memory read for one stage, added residually to the stage features.
    fn stage_input(
        &self,
        bound: &Bound,
        f: &Tensor,
        stage: usize,
        sfe: Option<&Tensor>,
    ) -> Result<Tensor> {
        let mut e = f.clone();
        if self.config.memory_enabled {
            let &[_, h, w] = f.shape() else {
                unreachable!("stage features are [c,h,w]");
            };
            let queries = ops::chw_to_qc(f)?;
            let reads = memory::hierarchical_read_lenient(
                &queries,
                bound.get("mem.part"),
                &self.config.memory,
            )?;
            let level = match stage {
                1 => reads.part,
                2 => reads.instance,
                _ => reads.semantic,
            };
            e = ops::add(&e, &ops::qc_to_chw(&level, h, w)?)?;
        }
        if let Some(sfe) = sfe {
            e = ops::add(&e, sfe)?;
        }
        Ok(e)
    }

    /// Encoder inputs for all three stages, given the cross-stage fusion
    /// products of the two earlier stages.
    pub fn stage_inputs(
        &self,
        bound: &Bound,
        f1: &Tensor,
        f2: &Tensor,
        f3: &Tensor,
        sfe1: &Tensor,
        sfe2: &Tensor,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        let e1 = self.stage_input(bound, f1, 1, None)?;
        let e2 = self.stage_input(bound, f2, 2, Some(sfe1))?;
        let e3 = self.stage_input(bound, f3, 3, Some(sfe2))?;
        Ok((e1, e2, e3))
    }

    /// U-shaped encode/decode for stages 1-2; flat residual blocks for
    /// stage 3. Output spatial extents equal input extents.
    pub fn encode_decode(&self, bound: &Bound, e: &Tensor, stage: usize) -> Result<Tensor> {
        self.check_stage(stage)?;
        if stage == 3 {
            let mut x = e.clone();
            for r in 0..STAGE3_BLOCKS {
                let t = self.conv_layer(
                    bound,
                    &alloc::format!("s3.res{r}.conv0"),
                    &x,
                    Padding::Zero,
                )?;
                let t = self.conv_layer(
                    bound,
                    &alloc::format!("s3.res{r}.conv1"),
                    &ops::relu(&t),
                    Padding::Zero,
                )?;
                x = ops::add(&x, &t)?;
            }
            return Ok(x);
        }
        let mut x = e.clone();
        let mut skips = Vec::with_capacity(self.config.depth);
        for l in 0..self.config.depth {
            x = ops::relu(&self.conv_layer(
                bound,
                &alloc::format!("s{stage}.enc{l}"),
                &x,
                Padding::Zero,
            )?);
            skips.push(x.clone());
            x = ops::avg_pool2(&x)?;
        }
        x = ops::relu(&self.conv_layer(
            bound,
            &alloc::format!("s{stage}.bottom"),
            &x,
            Padding::Zero,
        )?);
        for l in (0..self.config.depth).rev() {
            x = ops::upsample2(&x)?;
            x = ops::concat_channels(&x, &skips[l])?;
            x = ops::relu(&self.conv_layer(
                bound,
                &alloc::format!("s{stage}.dec{l}"),
                &x,
                Padding::Zero,
            )?);
        }
        Ok(x)
    }

    /// Supervised attention module: produces the stage estimate
    /// `X_S = img + conv(features)` and gates the features with a sigmoid
    /// mask derived from that estimate.
    pub fn sam(
        &self,
        bound: &Bound,
        features: &Tensor,
        img: &Tensor,
        stage: usize,
    ) -> Result<(Tensor, Tensor)> {
        self.check_stage(stage)?;
        let estimate = ops::add(
            img,
            &self.conv_layer(bound, &alloc::format!("s{stage}.sam.img"), features, Padding::Zero)?,
        )?;
        let mask = ops::sigmoid(&self.conv_layer(
            bound,
            &alloc::format!("s{stage}.sam.mask"),
            &estimate,
            Padding::Zero,
        )?);
        let gated = ops::add(&ops::mul(features, &mask)?, features)?;
        Ok((gated, estimate))
    }

    /// Cross-stage fusion product: 1x1 projections of the stage's final
    /// decoder features and its gated SAM features.
    fn fuse(&self, bound: &Bound, dec: &Tensor, gated: &Tensor, stage: usize) -> Result<Tensor> {
        let a = self.conv_layer(bound, &alloc::format!("s{stage}.sfe.dec"), dec, Padding::Zero)?;
        let b = self.conv_layer(bound, &alloc::format!("s{stage}.sfe.sam"), gated, Padding::Zero)?;
        ops::add(&a, &b)
    }

    /// Full three-stage forward pass.
    pub fn forward(&self, bound: &Bound, img: &Tensor) -> Result<ForwardPass> {
        self.check_extents(img)?;

        let f1 = self.shallow_features(bound, img, 1)?;
        let e1 = self.stage_input(bound, &f1, 1, None)?;
        let d1 = self.encode_decode(bound, &e1, 1)?;
        let (g1, x1) = self.sam(bound, &d1, img, 1)?;
        let sfe1 = self.fuse(bound, &d1, &g1, 1)?;

        let f2 = self.shallow_features(bound, img, 2)?;
        let e2 = self.stage_input(bound, &f2, 2, Some(&sfe1))?;
        let d2 = self.encode_decode(bound, &e2, 2)?;
        let (g2, x2) = self.sam(bound, &d2, img, 2)?;
        let sfe2 = self.fuse(bound, &d2, &g2, 2)?;

        let f3 = self.shallow_features(bound, img, 3)?;
        let e3 = self.stage_input(bound, &f3, 3, Some(&sfe2))?;
        let d3 = self.encode_decode(bound, &e3, 3)?;
        let (_g3, x3) = self.sam(bound, &d3, img, 3)?;

        Ok(ForwardPass {
            estimates: [x1, x2, x3],
            pre_memory: f1,
            post_memory: e1,
        })
    }

    /// Stage-1 autoencoding path used by the normality-recording phase:
    /// shallow -> encoder -> memory read at the bottleneck -> decoder ->
    /// reconstruction head. No input shortcut, so the reconstruction must
    /// come through the bottleneck.
    pub fn reconstruct(&self, bound: &Bound, img: &Tensor) -> Result<Tensor> {
        self.check_extents(img)?;
        let f = self.shallow_features(bound, img, 1)?;
        let mut x = f;
        let mut skips = Vec::with_capacity(self.config.depth);
        for l in 0..self.config.depth {
            x = ops::relu(&self.conv_layer(bound, &alloc::format!("s1.enc{l}"), &x, Padding::Zero)?);
            skips.push(x.clone());
            x = ops::avg_pool2(&x)?;
        }
        x = ops::relu(&self.conv_layer(bound, "s1.bottom", &x, Padding::Zero)?);
        if self.config.memory_enabled {
            let &[_, h, w] = x.shape() else {
                unreachable!();
            };
            let queries = ops::chw_to_qc(&x)?;
            let reads = memory::hierarchical_read_lenient(
                &queries,
                bound.get("mem.part"),
                &self.config.memory,
            )?;
            x = ops::add(&x, &ops::qc_to_chw(&reads.semantic, h, w)?)?;
        }
        for l in (0..self.config.depth).rev() {
            x = ops::upsample2(&x)?;
            x = ops::concat_channels(&x, &skips[l])?;
            x = ops::relu(&self.conv_layer(bound, &alloc::format!("s1.dec{l}"), &x, Padding::Zero)?);
        }
        self.conv_layer(bound, "recon.head", &x, Padding::Zero)
    }
}

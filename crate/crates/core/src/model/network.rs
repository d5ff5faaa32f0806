use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{
    grad_check, Coordinates, GradCheckReport, ParamStore, Tape, Tensor, Var, LEAKY_SLOPE,
};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::partition::{ground_truth, HopMatrix, Partition};

use super::layers::{
    argmax_rows, feature_neighbors, global_max_pool, hga_aggregate, hga_normalize, hga_scores,
    hop_distance_loss, hop_head, kernel_weights, part_conv, part_max_pool, point_feature_conv,
    revise_point_features, Attention, HopHead, Linear, Norm, PairLinear, PartConv,
};
use super::{LossMode, ModelConfig, PoolMode};

#[derive(Clone, Debug)]
struct LayerParams {
    conv: PairLinear,
    conv_norm: Option<Norm>,
    part: PartConv,
    hop: HopHead,
    attn: Attention,
}

/// Network parameters plus the layout needed to run them.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    layers: Vec<LayerParams>,
    fusion: Linear,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

/// Knobs of one forward pass that are not part of the model.
#[derive(Clone, Debug)]
pub struct ForwardOptions {
    /// Build the global descriptor. The hop loss does not depend on it, so
    /// pretraining skips it.
    pub descriptor: bool,
    /// Placeholder feature for empty parts.
    pub empty_fill: f64,
    /// Per-layer replacement for the predicted hop logits fed to attention;
    /// each tensor must be V²×(δ+1).
    pub logits_override: Option<Vec<Tensor>>,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            descriptor: true,
            empty_fill: 0.0,
            logits_override: None,
        }
    }
}

impl ForwardOptions {
    pub fn loss_only() -> Self {
        Self {
            descriptor: false,
            ..Self::default()
        }
    }
}

/// Tape handles produced by one layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerOutput {
    /// Revised point features, N×C.
    pub points: Var,
    /// Pooled part features, V×C.
    pub parts: Var,
    /// Pair features after the part MLP, V²×C.
    pub edges: Var,
    /// Hop-class logits, V²×(δ+1).
    pub logits: Var,
    /// Kernel weights per pair (V²) when the layer embeds hop distance.
    pub kernel: Option<Var>,
    /// Attention, V×V×H.
    pub attention: Var,
    /// Attention-aggregated part features, V×C.
    pub aggregated: Var,
    /// Mean hop cross-entropy of this layer.
    pub loss: Var,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub layers: Vec<LayerOutput>,
    pub descriptor: Option<Var>,
    /// Total self-supervised loss under the configured loss mode.
    pub loss: Var,
}

impl ForwardOutput {
    /// Correct and total valid pairs per layer, by argmax class.
    pub fn hop_hits(&self, tape: &Tape, hops: &HopMatrix) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .map(|l| hop_hits(tape.value(l.logits), hops))
            .collect()
    }
}

/// Correct and total valid pairs of one V²×(δ+1) logit table.
pub fn hop_hits(logits: &Tensor, hops: &HopMatrix) -> (usize, usize) {
    let pred = argmax_rows(logits);
    let valid = hops.valid_pairs();
    let correct = valid
        .iter()
        .filter(|&&r| pred[r] == hops.distances()[r])
        .count();
    (correct, valid.len())
}

impl Model {
    /// Fresh parameters drawn from the config seed.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let c = config.channels;
        let width = config.head_width();
        let mut layers = Vec::with_capacity(config.layers);
        for l in 1..=config.layers {
            let inputs = if l == 1 { 3 } else { c };
            let p = format!("layer{l}");
            let conv = PairLinear::new(&mut params, &format!("{p}.point"), inputs, c, &mut rng)?;
            let mut norm = |name: &str| -> Result<Option<Norm>> {
                match config.normalize {
                    true => Ok(Some(Norm::new(
                        &mut params,
                        &format!("{p}.{name}.norm"),
                        c,
                    )?)),
                    false => Ok(None),
                }
            };
            let (conv_norm, first_norm, second_norm, hop_norm) = (
                norm("point")?,
                norm("part.first")?,
                norm("part.second")?,
                norm("hop.hidden")?,
            );
            let part = PartConv {
                first: PairLinear::new(&mut params, &format!("{p}.part.first"), c, c, &mut rng)?,
                first_norm,
                second: Linear::new(&mut params, &format!("{p}.part.second"), c, c, &mut rng)?,
                second_norm,
            };
            let hop = HopHead {
                hidden: Linear::new(&mut params, &format!("{p}.hop.hidden"), c, c, &mut rng)?,
                norm: hop_norm,
                out: Linear::new(
                    &mut params,
                    &format!("{p}.hop.out"),
                    c,
                    config.hop_classes(),
                    &mut rng,
                )?,
            };
            let attn = Attention {
                heads: (0..config.heads)
                    .map(|h| {
                        Linear::new(
                            &mut params,
                            &format!("{p}.attn.head{h}"),
                            width,
                            1,
                            &mut rng,
                        )
                    })
                    .collect::<Result<_>>()?,
            };
            layers.push(LayerParams {
                conv,
                conv_norm,
                part,
                hop,
                attn,
            });
        }
        let fusion = Linear::new(
            &mut params,
            "fusion",
            config.layers * c,
            config.fusion_channels,
            &mut rng,
        )?;
        Ok(Self {
            config,
            params,
            layers,
            fusion,
        })
    }

    /// Rebuilds a model around stored parameters, which must match the
    /// config's layout exactly.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config)?;
        if params.len() != model.params.len() {
            return Err(Error::config(format!(
                "expected {} parameters, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.name(id).to_string();
            let src = params
                .id(&name)
                .ok_or_else(|| Error::config(format!("missing parameter {name:?}")))?;
            let value = params.value(src);
            if value.shape() != model.params.value(id).shape() {
                return Err(Error::config(format!(
                    "parameter {name:?} has shape {:?}, expected {:?}",
                    value.shape(),
                    model.params.value(id).shape()
                )));
            }
            *model.params.value_mut(id) = value.clone();
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Partition and ground-truth hops under the model's grid settings.
    pub fn ground_truth(&self, cloud: &PointCloud) -> Result<(Partition, HopMatrix)> {
        Ok(ground_truth(
            cloud,
            self.config.split,
            self.config.box_scale,
        )?)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        cloud: &PointCloud,
        partition: &Partition,
        hops: &HopMatrix,
        options: &ForwardOptions,
    ) -> Result<ForwardOutput> {
        self.forward_with(&self.params, tape, cloud, partition, hops, options)
    }

    /// Forward pass reading parameter values from `store`, which must share
    /// this model's layout.
    pub fn forward_with(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        cloud: &PointCloud,
        partition: &Partition,
        hops: &HopMatrix,
        options: &ForwardOptions,
    ) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let n = cloud.len();
        let v = cfg.num_parts();
        if partition.split() != cfg.split || partition.num_points() != n {
            return Err(Error::config(format!(
                "partition (split {}, {} points) does not match model split {} and cloud of {n}",
                partition.split(),
                partition.num_points(),
                cfg.split
            )));
        }
        if hops.num_parts() != v || hops.delta() != cfg.delta() {
            return Err(Error::config(format!(
                "hop matrix ({} parts, delta {}) does not match model ({v} parts, delta {})",
                hops.num_parts(),
                hops.delta(),
                cfg.delta()
            )));
        }
        if let Some(o) = &options.logits_override {
            let want = [v * v, cfg.hop_classes()];
            if o.len() != cfg.layers || o.iter().any(|t| t.shape() != want) {
                return Err(Error::config(format!(
                    "logits override must hold {} tensors of shape {want:?}",
                    cfg.layers
                )));
            }
        }
        let valid = hops.valid_mask();
        let valid_rows = hops.valid_pairs();
        let mut h = tape.leaf(Tensor::new(vec![n, 3], cloud.flat())?);
        let mut layers = Vec::with_capacity(cfg.layers);
        for (l, lp) in self.layers.iter().enumerate() {
            let nb = feature_neighbors(tape, h, cfg.neighbors)?;
            let points = point_feature_conv(
                tape,
                store,
                &lp.conv,
                lp.conv_norm.as_ref(),
                h,
                &nb,
                cfg.neighbors,
            )?;
            let parts = part_max_pool(tape, points, partition, options.empty_fill)?;
            let edges = part_conv(tape, store, &lp.part, parts, Some(&valid_rows))?;
            let logits = hop_head(tape, store, &lp.hop, edges, Some(&valid_rows))?;
            let loss = hop_distance_loss(tape, logits, hops)?;
            let kernel = if cfg.lambda[l] {
                let source = match &options.logits_override {
                    Some(o) => tape.leaf(o[l].clone()),
                    None => logits,
                };
                Some(kernel_weights(tape, source, cfg.sigma2, cfg.kernel)?)
            } else {
                None
            };
            let scores = hga_scores(tape, store, &lp.attn, edges, kernel)?;
            let attention = hga_normalize(tape, scores, valid)?;
            let aggregated = hga_aggregate(tape, attention, edges, valid)?;
            h = revise_point_features(tape, aggregated, points, partition)?;
            layers.push(LayerOutput {
                points: h,
                parts,
                edges,
                logits,
                kernel,
                attention,
                aggregated,
                loss,
            });
        }
        let loss = match cfg.loss {
            LossMode::Last => layers[cfg.layers - 1].loss,
            LossMode::All => {
                let mut total = layers[0].loss;
                for lo in &layers[1..] {
                    total = tape.add(total, lo.loss)?;
                }
                total
            }
        };
        let descriptor = if options.descriptor {
            let mut cat = layers[0].points;
            for lo in &layers[1..] {
                cat = tape.concat_last(cat, lo.points)?;
            }
            let fused = self.fusion.apply(tape, store, cat)?;
            let fused = tape.leaky_relu(fused, LEAKY_SLOPE)?;
            let max = global_max_pool(tape, fused)?;
            Some(match cfg.pool {
                PoolMode::Max => max,
                PoolMode::MaxAvg => {
                    let avg = tape.mean_axis(fused, 0)?;
                    tape.concat_last(max, avg)?
                }
            })
        } else {
            None
        };
        Ok(ForwardOutput {
            layers,
            descriptor,
            loss,
        })
    }

    /// Global descriptor of one cloud with ground truth computed on the fly.
    pub fn descriptor(&self, cloud: &PointCloud) -> Result<Tensor> {
        let (partition, hops) = self.ground_truth(cloud)?;
        let mut tape = Tape::new();
        let out = self.forward(
            &mut tape,
            cloud,
            &partition,
            &hops,
            &ForwardOptions::default(),
        )?;
        let d = out.descriptor.expect("descriptor requested");
        Ok(tape.value(d).clone())
    }

    /// Compares the analytic gradient of the self-supervised loss on one
    /// cloud with central differences of step `eps`.
    pub fn check_gradients(
        &self,
        cloud: &PointCloud,
        eps: f64,
        coords: Coordinates,
    ) -> Result<GradCheckReport> {
        let (partition, hops) = self.ground_truth(cloud)?;
        grad_check(&self.params, eps, coords, |tape, store| -> Result<Var> {
            let out = self.forward_with(
                store,
                tape,
                cloud,
                &partition,
                &hops,
                &ForwardOptions::loss_only(),
            )?;
            Ok(out.loss)
        })
    }
}

//! Dense spatio-temporal encoder: per-modality input embeddings, two
//! parallel streams of stacked DSA/CA layers, and instance pooling.

mod config;
pub mod layers;

pub use config::EncoderConfig;
pub use layers::{ca_forward, dsa_forward, layer_forward, LayerParams};

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Init, ParamId, ParamStore};
use crate::skelio::{temporal_resample, Modality, SkeletonSequence};
use crate::tensor::Mat;

/// Embedded or encoded features of both streams.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamFeatures {
    /// `[T][C]`.
    pub temporal: Mat,
    /// `[M·V][C]`.
    pub spatial: Mat,
}

/// One model input: the resampled sequence under each configured modality.
#[derive(Clone, Debug)]
pub struct ModalInputs {
    pub views: Vec<(Modality, SkeletonSequence)>,
}

impl ModalInputs {
    /// Resamples `seq` to `cfg.frames` and derives each configured modality.
    pub fn prepare(seq: &SkeletonSequence, cfg: &EncoderConfig, edges: &[[usize; 2]]) -> Self {
        let base = temporal_resample(seq, cfg.frames);
        let views = cfg.modalities.iter().map(|&m| (m, m.derive(&base, edges))).collect();
        Self { views }
    }
}

/// Temporal-stream input rows: one flattened `M·V·C` frame per row.
pub fn temporal_rows(seq: &SkeletonSequence) -> Mat {
    let d = seq.dims();
    Mat::from_vec(d.frames, d.persons * d.joints * d.coords, seq.data().to_vec())
}

/// Spatial-stream input rows: one `T·C` trajectory per `(person, joint)`.
pub fn spatial_rows(seq: &SkeletonSequence) -> Mat {
    let d = seq.dims();
    let mut m = Mat::zeros(d.persons * d.joints, d.frames * d.coords);
    for p in 0..d.persons {
        for v in 0..d.joints {
            let row = m.row_mut(p * d.joints + v);
            for t in 0..d.frames {
                row[t * d.coords..(t + 1) * d.coords].copy_from_slice(seq.joint(t, p, v));
            }
        }
    }
    m
}

#[derive(Clone, Debug)]
struct EmbedParams {
    modality: Modality,
    wt: ParamId,
    bt: ParamId,
    ws: ParamId,
    bs: ParamId,
}

/// Encoder structure bound to the parameter ids it declared in a store.
#[derive(Clone, Debug)]
pub struct Encoder {
    cfg: EncoderConfig,
    embeds: Vec<EmbedParams>,
    temporal: Vec<LayerParams>,
    spatial: Vec<LayerParams>,
}

/// Encoder outputs for one sequence.
#[derive(Clone, Copy, Debug)]
pub struct EncodedVars {
    pub y_t: Var,
    pub y_s: Var,
    /// `1 x 2·C_r` instance embedding.
    pub h: Var,
}

impl Encoder {
    /// Declares all encoder parameters under `enc/` and `embed/`.
    pub fn declare(cfg: EncoderConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let (t, l_s, c) = (cfg.frames, cfg.spatial_len(), cfg.coords);
        let row_t = cfg.persons * cfg.joints * c;
        let row_s = t * c;
        let embeds = cfg
            .modalities
            .iter()
            .map(|&m| {
                let p = format!("embed/{}", m.name());
                EmbedParams {
                    modality: m,
                    wt: store.declare(&format!("{p}/t/w"), row_t, cfg.embed_dim, Init::FanIn(row_t), rng),
                    bt: store.declare(&format!("{p}/t/b"), 1, cfg.embed_dim, Init::Zeros, rng),
                    ws: store.declare(&format!("{p}/s/w"), row_s, cfg.embed_dim, Init::FanIn(row_s), rng),
                    bs: store.declare(&format!("{p}/s/b"), 1, cfg.embed_dim, Init::Zeros, rng),
                }
            })
            .collect();
        let mut stream = |name: &str, len: usize| -> Vec<LayerParams> {
            (0..cfg.layers)
                .map(|l| {
                    let dim_in = if l == 0 { cfg.embed_dim } else { cfg.repr_dim };
                    LayerParams::declare(store, &format!("enc/{name}/{l}"), len, dim_in, cfg.repr_dim, cfg.heads, cfg.kernel_size, rng)
                })
                .collect()
        };
        let temporal = stream("t", t);
        let spatial = stream("s", l_s);
        Ok(Self { cfg, embeds, temporal, spatial })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Width of the instance embedding, `2·C_r`.
    pub fn embedding_dim(&self) -> usize {
        2 * self.cfg.repr_dim
    }

    pub fn temporal_layers(&self) -> &[LayerParams] {
        &self.temporal
    }

    pub fn spatial_layers(&self) -> &[LayerParams] {
        &self.spatial
    }

    fn check_input(&self, seq: &SkeletonSequence) -> Result<()> {
        let d = seq.dims();
        let c = &self.cfg;
        if (d.frames, d.persons, d.joints, d.coords) != (c.frames, c.persons, c.joints, c.coords) {
            return Err(Error::Shape(format!(
                "sequence {} has (T, M, V, C) = ({}, {}, {}, {}), encoder expects ({}, {}, {}, {})",
                seq.id, d.frames, d.persons, d.joints, d.coords, c.frames, c.persons, c.joints, c.coords
            )));
        }
        Ok(())
    }

    /// Affine embedding of one modality: `(X_t E_t + b_t, X_s E_s + b_s)`.
    pub fn embed(&self, tape: &mut Tape, modality: Modality, seq: &SkeletonSequence) -> Result<(Var, Var)> {
        self.check_input(seq)?;
        let p = self
            .embeds
            .iter()
            .find(|e| e.modality == modality)
            .ok_or_else(|| Error::Config(format!("encoder has no {} embedding", modality.name())))?;
        let xt = tape.input(temporal_rows(seq));
        let xs = tape.input(spatial_rows(seq));
        let (wt, bt, ws, bs) = (tape.param(p.wt), tape.param(p.bt), tape.param(p.ws), tape.param(p.bs));
        Ok((tape.linear(xt, wt, bt), tape.linear(xs, ws, bs)))
    }

    /// Embeds every modality and averages them per stream.
    pub fn embed_fused(&self, tape: &mut Tape, inputs: &ModalInputs) -> Result<(Var, Var)> {
        if inputs.views.is_empty() {
            return Err(Error::Config("no modalities to fuse".into()));
        }
        let mut parts = Vec::with_capacity(inputs.views.len());
        for (m, seq) in &inputs.views {
            parts.push(self.embed(tape, *m, seq)?);
        }
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let inv = 1.0 / parts.len() as f64;
        let (mut ft, mut fs) = parts[0];
        for &(t, s) in &parts[1..] {
            ft = tape.add(ft, t);
            fs = tape.add(fs, s);
        }
        Ok((tape.scale(ft, inv), tape.scale(fs, inv)))
    }

    /// Runs both streams. The causal flag applies to the temporal stream only.
    pub fn encode(&self, tape: &mut Tape, f_t: Var, f_s: Var) -> (Var, Var) {
        let c = &self.cfg;
        let mut y_t = f_t;
        for p in &self.temporal {
            y_t = layer_forward(tape, y_t, p, c.alpha, c.gap, c.causal);
        }
        let mut y_s = f_s;
        for p in &self.spatial {
            y_s = layer_forward(tape, y_s, p, c.alpha, c.gap, false);
        }
        (y_t, y_s)
    }

    /// Embedding, fusion, both streams and instance pooling.
    pub fn forward(&self, tape: &mut Tape, inputs: &ModalInputs) -> Result<EncodedVars> {
        let (f_t, f_s) = self.embed_fused(tape, inputs)?;
        let (y_t, y_s) = self.encode(tape, f_t, f_s);
        let h = instance_embed(tape, y_t, y_s);
        Ok(EncodedVars { y_t, y_s, h })
    }

    /// Dense representations of one prepared input, without gradients.
    pub fn represent(&self, store: &ParamStore, inputs: &ModalInputs) -> Result<(StreamFeatures, Vec<f64>)> {
        let mut tape = Tape::new(store);
        let out = self.forward(&mut tape, inputs)?;
        let feats = StreamFeatures { temporal: tape.value(out.y_t).clone(), spatial: tape.value(out.y_s).clone() };
        Ok((feats, tape.value(out.h).as_slice().to_vec()))
    }

    /// Instance embedding of one prepared input.
    pub fn embed_instance(&self, store: &ParamStore, inputs: &ModalInputs) -> Result<Vec<f64>> {
        Ok(self.represent(store, inputs)?.1)
    }
}

/// Concatenated per-column maxima of both streams, temporal half first.
pub fn instance_embed(tape: &mut Tape, y_t: Var, y_s: Var) -> Var {
    let a = tape.col_max(y_t);
    let b = tape.col_max(y_s);
    tape.concat_cols(&[a, b])
}

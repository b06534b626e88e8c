//! The AV-Mamba network and its training loss.
//!
//! `input proj -> TSA -> AMF -> MFE -> PLSIM -> HAN tail -> MMIL head`,
//! each novel stage individually switchable for ablations.

pub mod amf;
pub mod han;
pub mod loss;
pub mod mfe;
pub mod mmil;
pub mod plsim;
pub mod tsa;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{VideoRecord, Vocabulary};
use crate::nn::Linear;
use crate::ssm::{MambaBlock, MambaConfig, Modality, ScanKernel};
use crate::tensor::params::ParamStore;
use crate::tensor::{Result, Tensor, TensorError};

pub use amf::{Amf, AmfDims};
pub use han::HanTail;
pub use loss::{bce, compute_loss};
pub use mfe::Mfe;
pub use mmil::MmilHead;
pub use plsim::{plsim_fuse, Plsim, TextEmbedder};
pub use tsa::Tsa;

/// How the fusion stage is realised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AmfMode {
    /// Three-branch scans with shared `B` plus the mixed feature.
    #[default]
    Full,
    /// One private Mamba block per modality, no sharing, no mixed feature.
    Private,
    /// No fusion stage at all.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub segments: usize,
    pub d_model: usize,
    pub classes: usize,
    pub d_state: usize,
    pub expand: usize,
    pub conv_kernel: usize,
    pub text_dim: usize,
    pub d_audio: usize,
    pub d_visual: usize,
    pub lambda_a: f64,
    pub lambda_v: f64,
    pub use_tsa: bool,
    pub amf: AmfMode,
    /// Hard switch for the cross-modal shared `B` path inside AMF.
    pub share_b: bool,
    pub use_mfe: bool,
    pub use_plsim: bool,
    pub parallel_scan: bool,
    pub text_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            segments: 10,
            d_model: 64,
            classes: 25,
            d_state: 16,
            expand: 2,
            conv_kernel: 4,
            text_dim: 64,
            d_audio: 64,
            d_visual: 96,
            lambda_a: 1.0,
            lambda_v: 1.0,
            use_tsa: true,
            amf: AmfMode::Full,
            share_b: true,
            use_mfe: true,
            use_plsim: true,
            parallel_scan: false,
            text_seed: 0,
        }
    }
}

impl ModelConfig {
    /// d = 512 with VGGish-width audio (128) and ResNet-152 + R(2+1)D
    /// visual (2048 + 512) inputs, 512-wide text embeddings.
    pub fn paper_scale() -> Self {
        Self {
            d_model: 512,
            text_dim: 512,
            d_audio: 128,
            d_visual: 2560,
            ..Self::default()
        }
    }

    /// Every novel component disabled.
    pub fn baseline(mut self) -> Self {
        self.use_tsa = false;
        self.amf = AmfMode::Off;
        self.use_mfe = false;
        self.use_plsim = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("segments", self.segments),
            ("d_model", self.d_model),
            ("classes", self.classes),
            ("d_state", self.d_state),
            ("expand", self.expand),
            ("conv_kernel", self.conv_kernel),
            ("text_dim", self.text_dim),
            ("d_audio", self.d_audio),
            ("d_visual", self.d_visual),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(TensorError::Config(format!("model.{name} must be positive")));
            }
        }
        for (name, v) in [("lambda_a", self.lambda_a), ("lambda_v", self.lambda_v)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(TensorError::Config(format!("model.{name} must be a non-negative number")));
            }
        }
        Ok(())
    }

    pub fn kernel(&self) -> ScanKernel {
        if self.parallel_scan {
            ScanKernel::Parallel
        } else {
            ScanKernel::Sequential
        }
    }

    fn mamba(&self, d: usize) -> MambaConfig {
        MambaConfig {
            d_model: d,
            expand: self.expand,
            d_state: self.d_state,
            conv_kernel: self.conv_kernel,
            kernel: self.kernel(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Fusion {
    Amf(Amf),
    Private([MambaBlock; 2]),
    Off,
}

/// One video's model inputs.
#[derive(Debug, Clone)]
pub struct ModelInput {
    pub audio: Tensor,
    pub visual: Tensor,
    pub text_a: Tensor,
    pub text_v: Tensor,
}

/// Intermediate features; disabled stages pass their input through.
#[derive(Debug, Clone)]
pub struct StageFeatures {
    pub input_a: Tensor,
    pub input_v: Tensor,
    pub tsa_out_a: Tensor,
    pub tsa_out_v: Tensor,
    pub amf_out_a: Tensor,
    pub amf_out_v: Tensor,
    pub amf_mix: Option<Tensor>,
    pub mfe_out_a: Tensor,
    pub mfe_out_v: Tensor,
    pub plsim_out_a: Tensor,
    pub plsim_out_v: Tensor,
}

impl StageFeatures {
    pub fn all(&self) -> Vec<(&'static str, &Tensor)> {
        let mut v = vec![
            ("input_a", &self.input_a),
            ("input_v", &self.input_v),
            ("tsa_out_a", &self.tsa_out_a),
            ("tsa_out_v", &self.tsa_out_v),
            ("amf_out_a", &self.amf_out_a),
            ("amf_out_v", &self.amf_out_v),
            ("mfe_out_a", &self.mfe_out_a),
            ("mfe_out_v", &self.mfe_out_v),
            ("plsim_out_a", &self.plsim_out_a),
            ("plsim_out_v", &self.plsim_out_v),
        ];
        if let Some(m) = &self.amf_mix {
            v.push(("amf_mix", m));
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct ModelOutputs {
    pub seg_prob_a: Tensor,
    pub seg_prob_v: Tensor,
    pub video_prob: Tensor,
    pub frame_weights: [Tensor; 2],
    pub modality_weights: Tensor,
    /// `[self_a, self_v, cross_a, cross_v]`.
    pub attention: [Tensor; 4],
    pub stages: StageFeatures,
}

#[derive(Debug, Clone)]
pub struct AvMamba {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub input_a: Linear,
    pub input_v: Linear,
    pub tsa: Option<[Tsa; 2]>,
    pub fusion: Fusion,
    pub mfe: Option<Mfe>,
    pub plsim: Option<Plsim>,
    pub han: HanTail,
    pub head: MmilHead,
    pub text: TextEmbedder,
}

impl AvMamba {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let vocab = Vocabulary::llp(config.classes);
        Self::with_vocabulary(config, &vocab, seed)
    }

    /// Parameters are initialised per name, so two models with the same seed
    /// agree on every parameter they have in common.
    pub fn with_vocabulary(config: ModelConfig, vocab: &Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab.len() != config.classes {
            return Err(TensorError::Config(format!(
                "vocabulary has {} classes, model.classes is {}",
                vocab.len(),
                config.classes
            )));
        }
        let d = config.d_model;
        let mut store = ParamStore::new(seed);
        let s = &mut store;
        let input_a = Linear::new(s, "input.a", config.d_audio, d, true)?;
        let input_v = Linear::new(s, "input.v", config.d_visual, d, true)?;
        let tsa = if config.use_tsa {
            Some([
                Tsa::new(s, "tsa.a", d, config.d_state, config.kernel())?,
                Tsa::new(s, "tsa.v", d, config.d_state, config.kernel())?,
            ])
        } else {
            None
        };
        let mc = config.mamba(d);
        let fusion = match config.amf {
            AmfMode::Full => {
                let mut amf = Amf::new(
                    s,
                    "amf",
                    AmfDims {
                        d_model: d,
                        d_inner: mc.d_inner(),
                        d_state: config.d_state,
                        dt_rank: mc.dt_rank(),
                        conv_kernel: config.conv_kernel,
                        segments: config.segments,
                        kernel: config.kernel(),
                    },
                )?;
                amf.set_sharing(config.share_b);
                Fusion::Amf(amf)
            }
            AmfMode::Private => Fusion::Private([
                MambaBlock::new(s, "private.a", mc)?,
                MambaBlock::new(s, "private.v", mc)?,
            ]),
            AmfMode::Off => Fusion::Off,
        };
        let mfe = if config.use_mfe { Some(Mfe::new(s, "mfe", d)?) } else { None };
        let plsim = if config.use_plsim {
            Some(Plsim::new(s, "plsim", config.text_dim, d)?)
        } else {
            None
        };
        let han = HanTail::new(s, "han", d)?;
        let head = MmilHead::new(s, "head", d, config.classes)?;
        let text = TextEmbedder::new(vocab.clone(), config.text_dim, config.text_seed);
        Ok(Self {
            config,
            store,
            input_a,
            input_v,
            tsa,
            fusion,
            mfe,
            plsim,
            han,
            head,
            text,
        })
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        self.store.tensors()
    }

    /// Features plus stub text embeddings of the record's pseudo-labels.
    pub fn input_for(&self, record: &VideoRecord) -> ModelInput {
        ModelInput {
            audio: record.audio.clone(),
            visual: record.visual.clone(),
            text_a: self.text.embed(&record.pseudo_a, Modality::Audio),
            text_v: self.text.embed(&record.pseudo_v, Modality::Visual),
        }
    }

    fn check_input(&self, input: &ModelInput) -> Result<()> {
        let t = self.config.segments;
        let expect = [
            (&input.audio, self.config.d_audio, "audio"),
            (&input.visual, self.config.d_visual, "visual"),
            (&input.text_a, self.config.text_dim, "text_a"),
            (&input.text_v, self.config.text_dim, "text_v"),
        ];
        for (x, width, op) in expect {
            if x.shape() != [t, width] {
                return Err(TensorError::ShapeMismatch {
                    op,
                    lhs: x.shape().to_vec(),
                    rhs: vec![t, width],
                });
            }
        }
        Ok(())
    }

    pub fn forward(&self, input: &ModelInput) -> Result<ModelOutputs> {
        self.check_input(input)?;
        let fa = self.input_a.forward(&input.audio)?;
        let fv = self.input_v.forward(&input.visual)?;

        let (ta, tv) = match &self.tsa {
            Some([a, v]) => (a.forward(&fa)?, v.forward(&fv)?),
            None => (fa.clone(), fv.clone()),
        };

        let (aa, av, mix) = match &self.fusion {
            Fusion::Amf(amf) => {
                let (a, v, m) = amf.forward(&ta, &tv)?;
                (a, v, Some(m))
            }
            Fusion::Private([a, v]) => (a.forward(&ta)?, v.forward(&tv)?, None),
            Fusion::Off => (ta.clone(), tv.clone(), None),
        };

        let (ma, mv) = match &self.mfe {
            Some(mfe) => mfe.forward(&aa, &av, mix.as_ref())?,
            None => (aa.clone(), av.clone()),
        };

        let (pa, pv) = match &self.plsim {
            Some(p) => p.forward(&ma, &mv, &input.text_a, &input.text_v)?,
            None => (ma.clone(), mv.clone()),
        };

        let han = self.han.forward(&pa, &pv)?;
        let head = self.head.forward(&han.g_a, &han.g_v)?;
        Ok(ModelOutputs {
            seg_prob_a: head.seg_prob_a,
            seg_prob_v: head.seg_prob_v,
            video_prob: head.video_prob,
            frame_weights: head.frame_weights,
            modality_weights: head.modality_weights,
            attention: han.attention,
            stages: StageFeatures {
                input_a: fa,
                input_v: fv,
                tsa_out_a: ta,
                tsa_out_v: tv,
                amf_out_a: aa,
                amf_out_v: av,
                amf_mix: mix,
                mfe_out_a: ma,
                mfe_out_v: mv,
                plsim_out_a: pa,
                plsim_out_v: pv,
            },
        })
    }

    /// Per-video forward passes, run concurrently; output order matches
    /// `batch`.
    pub fn model_forward(&self, batch: &[VideoRecord]) -> Result<Vec<ModelOutputs>> {
        batch
            .par_iter()
            .map(|r| self.forward(&self.input_for(r)))
            .collect()
    }

    /// Loss of one video under this model's `lambda` weights.
    pub fn loss(&self, outputs: &ModelOutputs, record: &VideoRecord) -> Result<Tensor> {
        compute_loss(
            outputs,
            &record.video_label_tensor(),
            &record.pseudo_a,
            &record.pseudo_v,
            self.config.lambda_a,
            self.config.lambda_v,
        )
    }
}

#[cfg(test)]
mod tests;

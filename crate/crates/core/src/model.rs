//! The full generator-side network and the discriminator, wired from a
//! [`Config`].

use candle_core::{DType, Device, Tensor};
use rand_chacha::ChaCha8Rng;

use crate::adapters::{Film, Gtu, ParaProjection};
use crate::alignment::DurationPredictor;
use crate::config::Config;
use crate::encoder::TextEncoder;
use crate::frontend::{PhonemeSequence, Vocabulary};
use crate::gan::{Generator, MultiPeriodDiscriminator};
use crate::latent::{Flow, PosteriorEncoder, PriorHead};
use crate::nn::ParamStore;
use crate::{Error, Result};

/// Top-level parameter groups; every parameter name starts with one of these.
pub const MODULES: [&str; 9] = [
    "text_encoder",
    "gtu",
    "projection",
    "film",
    "prior",
    "posterior",
    "flow",
    "duration",
    "decoder",
];

pub struct ParaStyleTts {
    pub cfg: Config,
    pub store: ParamStore,
    pub encoder: TextEncoder,
    pub gtu: Gtu,
    pub projection: ParaProjection,
    pub film: Film,
    pub prior: PriorHead,
    pub posterior: PosteriorEncoder,
    pub flow: Flow,
    pub duration: DurationPredictor,
    pub generator: Generator,
}

/// Style-integrated phonemes and the two prompt projections.
#[derive(Debug, Clone)]
pub struct StyledText {
    /// `(B, L, d₁)`, zero on padded positions.
    pub x_hat: Tensor,
    pub s_local: Tensor,
    pub s_global: Tensor,
}

impl ParaStyleTts {
    pub fn new(cfg: &Config, vocab: &Vocabulary, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let store = ParamStore::new(seed, cfg.dtype());
        let root = store.root();
        let d1 = cfg.phoneme_dim;
        let n = cfg.latent_channels;
        let dg = cfg.global_dim;
        let encoder = TextEncoder::new(&root.pp("text_encoder"), vocab.phonemes.len(), vocab.styles.len(), &cfg.encoder())?;
        let gtu = Gtu::new(&root.pp("gtu"), d1)?;
        let projection = ParaProjection::new(&root.pp("projection"), cfg.prompt_dim, d1, dg)?;
        let film = Film::new(&root.pp("film"), d1, d1)?;
        let prior = PriorHead::new(&root.pp("prior"), d1, n)?;
        let posterior = PosteriorEncoder::new(
            &root.pp("posterior"),
            cfg.n_mels,
            dg,
            cfg.posterior_hidden,
            n,
            cfg.posterior_kernel,
            cfg.posterior_layers,
        )?;
        let flow = Flow::new(
            &root.pp("flow"),
            n,
            cfg.flow_hidden,
            cfg.flow_kernel,
            cfg.flow_layers,
            cfg.flow_count,
            dg,
        )?;
        let duration = DurationPredictor::new(
            &root.pp("duration"),
            d1,
            cfg.duration_channels,
            cfg.duration_kernel,
            cfg.duration_layers,
            cfg.dropout,
            cfg.duration_stochastic,
        )?;
        let generator = Generator::new(&root.pp("decoder"), n + dg, &cfg.generator())?;
        Ok(Self {
            cfg: cfg.clone(),
            store,
            encoder,
            gtu,
            projection,
            film,
            prior,
            posterior,
            flow,
            duration,
            generator,
        })
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    /// Text encoder → GTU fusion → prompt projection → FiLM.
    /// `phonemes`, `styles`: `(B, L)` u32; `mask`: `(B, L)`; `s_para`: `(B, d₂)`.
    pub fn encode_styled(
        &self,
        phonemes: &Tensor,
        styles: &Tensor,
        mask: &Tensor,
        s_para: &Tensor,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<StyledText> {
        let enc = self.encoder.forward(phonemes, styles, mask, rng.as_deref_mut())?;
        let x_tilde = self.gtu.forward(&enc.x, &enc.s_pho)?;
        let proj = self.projection.forward(s_para)?;
        let x_hat = self.film.forward(&x_tilde, &proj.local)?.broadcast_mul(&mask.unsqueeze(2)?)?;
        Ok(StyledText {
            x_hat,
            s_local: proj.local,
            s_global: proj.global,
        })
    }

    /// Batch-of-one id tensors and mask for a tokenized sequence.
    pub fn sequence_tensors(&self, seq: &PhonemeSequence) -> Result<(Tensor, Tensor, Tensor)> {
        let l = seq.len();
        if l == 0 {
            return Err(Error::Invalid("empty phoneme sequence".into()));
        }
        let dev = self.device();
        let p = Tensor::from_vec(seq.phoneme_ids.clone(), (1, l), dev)?;
        let s = Tensor::from_vec(seq.style_ids.clone(), (1, l), dev)?;
        let m = Tensor::ones((1, l), self.dtype(), dev)?;
        Ok((p, s, m))
    }

    pub fn prompt_tensor(&self, embedding: &[f32]) -> Result<Tensor> {
        if embedding.len() != self.cfg.prompt_dim {
            return Err(Error::shape("prompt embedding", self.cfg.prompt_dim, embedding.len()));
        }
        Ok(Tensor::from_vec(embedding.to_vec(), (1, embedding.len()), self.device())?.to_dtype(self.dtype())?)
    }
}

pub struct Discriminator {
    pub store: ParamStore,
    pub mpd: MultiPeriodDiscriminator,
}

impl Discriminator {
    pub fn new(cfg: &Config, seed: u64) -> Result<Self> {
        let store = ParamStore::new(seed, cfg.dtype());
        let mpd = MultiPeriodDiscriminator::new(&store.root().pp("mpd"), &cfg.disc_periods, &cfg.disc_channels)?;
        Ok(Self { store, mpd })
    }
}

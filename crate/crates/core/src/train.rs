//! Training loops: alternating discriminator/generator updates, or MSE only.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::data::{batch_iter, Batch, SamplePair};
use crate::error::{Error, Result};
use crate::losses::{d_loss, g_loss, mse_loss};
use crate::model::{Discriminator, Generator, ParamStore, SgenConfig};
use crate::optim::{adam_step, AdamState};

/// Scalars observed during one update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// The generator objective: adversarial plus weighted MSE, or MSE alone.
    pub loss_g: f64,
    /// Discriminator objective; `None` when training without a discriminator.
    pub loss_d: Option<f64>,
    pub loss_mse: f64,
    /// Smallest and largest discriminator output over real and fake inputs.
    pub d_range: Option<(f64, f64)>,
    /// Smallest and largest generator output value.
    pub g_range: (f64, f64),
}

impl StepRecord {
    pub const HEADER: &'static str = "step,loss_g,loss_d,loss_mse";
}

/// One log line `step,loss_g,loss_d,loss_mse`; `loss_d` is empty without a
/// discriminator.
impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.loss_d.map(|v| format!("{v:.8e}")).unwrap_or_default();
        write!(f, "{},{:.8e},{},{:.8e}", self.step, self.loss_g, d, self.loss_mse)
    }
}

fn range(data: &[f32]) -> (f64, f64) {
    data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v as f64), hi.max(v as f64))
    })
}

fn check_finite(step: usize, what: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Diverged { step, what })
    }
}

/// Generator and optional discriminator with their Adam states.
pub struct Trainer {
    cfg: SgenConfig,
    gen: Generator,
    disc: Option<Discriminator>,
    g_params: ParamStore<f32>,
    d_params: Option<ParamStore<f32>>,
    g_opt: AdamState<f32>,
    d_opt: AdamState<f32>,
    step: usize,
}

impl Trainer {
    /// Fresh parameters drawn from `seed`.
    pub fn new(cfg: &SgenConfig, seed: u64) -> Result<Self> {
        let gen = Generator::new(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g_params = gen.init_params(&mut rng)?;
        let (disc, d_params) = match cfg.gan_loss {
            Some(_) => {
                let disc = Discriminator::new(cfg)?;
                rng.set_stream(1);
                let p = disc.init_params(&mut rng)?;
                (Some(disc), Some(p))
            }
            None => (None, None),
        };
        Ok(Trainer {
            cfg: cfg.clone(),
            gen,
            disc,
            g_params,
            d_params,
            g_opt: AdamState::default(),
            d_opt: AdamState::default(),
            step: 0,
        })
    }

    pub fn config(&self) -> &SgenConfig {
        &self.cfg
    }

    pub fn generator(&self) -> &Generator {
        &self.gen
    }

    pub fn g_params(&self) -> &ParamStore<f32> {
        &self.g_params
    }

    pub fn d_params(&self) -> Option<&ParamStore<f32>> {
        self.d_params.as_ref()
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// One update on a normalized batch: a discriminator step followed by a
    /// generator step, or a single MSE step.
    pub fn step(&mut self, batch: &Batch<f32>) -> Result<StepRecord> {
        let step = self.step + 1;
        let lr = self.cfg.learning_rate;

        let mut tape = Tape::new();
        let g_bound = self.g_params.bind(&mut tape, true);
        let s = tape.constant(batch.s.clone());
        let t = tape.constant(batch.t.clone());
        let fake = self.gen.forward(&mut tape, s, &g_bound)?.output;
        let g_range = range(tape.value(fake).data());
        let mse = mse_loss(&mut tape, fake, t)?;
        let loss_mse = check_finite(step, "loss_mse", tape.value(mse).data()[0] as f64)?;

        let (loss_g, loss_d, d_range, objective) = match (&self.disc, self.d_params.as_mut()) {
            (Some(disc), Some(d_params)) => {
                let variant = self.cfg.gan_loss.expect("discriminator implies a GAN loss");
                // Discriminator step on the detached fake.
                let mut d_tape = Tape::new();
                let d_bound = d_params.bind(&mut d_tape, true);
                let real_in = d_tape.constant(batch.t.clone());
                let fake_in = d_tape.constant(tape.value(fake).clone());
                let d_real = disc.forward(&mut d_tape, real_in, &d_bound)?;
                let d_fake = disc.forward(&mut d_tape, fake_in, &d_bound)?;
                let (r_lo, r_hi) = range(d_tape.value(d_real).data());
                let (f_lo, f_hi) = range(d_tape.value(d_fake).data());
                let ld = d_loss(&mut d_tape, d_real, d_fake)?;
                let loss_d = check_finite(step, "loss_d", d_tape.value(ld).data()[0] as f64)?;
                d_tape.backward(ld)?;
                d_params.clear_grads();
                d_params.accumulate_grads(&d_tape, &d_bound)?;
                adam_step(d_params, &mut self.d_opt, lr)?;

                // Generator step through the updated discriminator.
                let d_frozen = d_params.bind(&mut tape, false);
                let d_fake = disc.forward(&mut tape, fake, &d_frozen)?;
                let lg = g_loss(&mut tape, d_fake, fake, t, self.cfg.lambda_mse, variant)?;
                let d_range = (r_lo.min(f_lo), r_hi.max(f_hi));
                (tape.value(lg).data()[0] as f64, Some(loss_d), Some(d_range), lg)
            }
            _ => (loss_mse, None, None, mse),
        };
        let loss_g = check_finite(step, "loss_g", loss_g)?;
        tape.backward(objective)?;
        self.g_params.clear_grads();
        self.g_params.accumulate_grads(&tape, &g_bound)?;
        adam_step(&mut self.g_params, &mut self.g_opt, lr)?;
        if !self.g_params.iter().all(|(_, p)| p.is_finite()) {
            return Err(Error::Diverged { step, what: "generator parameters" });
        }
        self.step = step;
        Ok(StepRecord {
            step,
            loss_g,
            loss_d,
            loss_mse,
            d_range,
            g_range,
        })
    }

    /// Runs `steps` updates, cycling through epochs of `pairs`. Epoch `e`
    /// is shuffled with `seed + e`. `on_step` sees every record.
    pub fn fit<F>(&mut self, pairs: &[SamplePair], steps: usize, seed: u64, mut on_step: F) -> Result<()>
    where
        F: FnMut(&Trainer, &StepRecord) -> Result<()>,
    {
        let mut done = 0;
        let mut epoch = 0u64;
        while done < steps {
            let mut any = false;
            for batch in batch_iter::<f32>(pairs, self.cfg.batch_size, seed.wrapping_add(epoch))? {
                let record = self.step(&batch?)?;
                on_step(self, &record)?;
                any = true;
                done += 1;
                if done == steps {
                    break;
                }
            }
            if !any {
                break;
            }
            epoch += 1;
        }
        Ok(())
    }
}

/// Mean MSE of the generator over `pairs` in the normalized domain.
pub fn dataset_mse(gen: &Generator, params: &ParamStore<f32>, pairs: &[SamplePair], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for batch in batch_iter::<f32>(pairs, batch_size, 0)? {
        let batch = batch?;
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let s = tape.constant(batch.s);
        let t = tape.constant(batch.t);
        let out = gen.forward(&mut tape, s, &bound)?.output;
        let l = mse_loss(&mut tape, out, t)?;
        let n = batch.indices.len();
        total += tape.value(l).data()[0] as f64 * n as f64;
        count += n;
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_pairs, make_synthetic_corpus, resize_bilinear, DegradeSpec};
    use crate::ensemble::MergeMode;
    use crate::losses::GanLoss;

    fn toy(count: usize) -> Vec<SamplePair> {
        let clean: Vec<_> = make_synthetic_corpus(count, 3)
            .iter()
            .map(|c| resize_bilinear(c, 32, 32).unwrap())
            .collect();
        let spec = DegradeSpec {
            scales: vec![(32, 32)],
            ..DegradeSpec::default()
        };
        build_pairs(&clean, &spec).unwrap()
    }

    #[test]
    fn mse_only_log_and_determinism() {
        let mut cfg = SgenConfig::tiny(2, 4, MergeMode::Sgu);
        cfg.gan_loss = None;
        cfg.batch_size = 2;
        let pairs = toy(2);
        let run = || {
            let mut tr = Trainer::new(&cfg, 5).unwrap();
            let mut lines = Vec::new();
            tr.fit(&pairs, 3, 0, |_, r| {
                lines.push(r.to_string());
                Ok(())
            })
            .unwrap();
            lines
        };
        let a = run();
        assert_eq!(a.len(), 3);
        assert_eq!(a[0].split(',').count(), 4);
        assert_eq!(a[0].split(',').nth(2), Some(""));
        assert_eq!(a, run());
    }

    #[test]
    fn adversarial_step_reports_both_losses() {
        let mut cfg = SgenConfig::tiny(2, 4, MergeMode::Max);
        cfg.gan_loss = Some(GanLoss::NonSaturating);
        cfg.batch_size = 2;
        let pairs = toy(2);
        let mut tr = Trainer::new(&cfg, 1).unwrap();
        let batch = batch_iter::<f32>(&pairs, 2, 0).unwrap().next().unwrap().unwrap();
        let r = tr.step(&batch).unwrap();
        assert!(r.loss_d.unwrap().is_finite());
        let (lo, hi) = r.d_range.unwrap();
        assert!(lo > 0.0 && hi < 1.0);
        assert_eq!(tr.steps_done(), 1);
    }
}

//! Resolved run settings: defaults, then a `key = value` file, then flags.

use std::fmt::Write as _;

use geotraj::data::WindowSpec;
use geotraj::model::{HeadMode, ModelConfig, MULTI_HEADS};
use geotraj::training::TrainConfig;
use geotraj::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: [f64; 3],
    pub stride: usize,
    pub frame_step: usize,
    heads_explicit: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            split: [0.7, 0.1, 0.2],
            stride: 1,
            frame_step: 1,
            heads_explicit: false,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

impl Settings {
    /// Sets one key. Training and windowing keys are handled here, the rest
    /// go to the model configuration.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "epochs" => t.epochs = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "lr" => t.optimizer.lr = num(key, value)?,
            "weight_decay" => t.optimizer.weight_decay = num(key, value)?,
            "lr_decay" => t.lr_decay = num(key, value)?,
            "clip_norm" => t.clip_norm = if value == "none" { None } else { Some(num(key, value)?) },
            "mode" => t.mode = value.parse()?,
            "seed" => t.seed = num(key, value)?,
            "augment" => t.augment_rotation = num(key, value)?,
            "stride" => self.stride = num(key, value)?,
            "frame_step" => self.frame_step = num(key, value)?,
            "split" => {
                let parts: Vec<f64> = value.split(',').map(|p| num(key, p.trim())).collect::<Result<_>>()?;
                self.split = parts
                    .try_into()
                    .map_err(|_| Error::Config(format!("`split` needs three fractions, got `{value}`")))?;
            }
            _ => {
                if key == "heads" {
                    self.heads_explicit = true;
                }
                self.model.set(key, value)?;
            }
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in geotraj::model::parse_key_values(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Final consistency pass: multi-head training without an explicit head
    /// count gets the standard replica count.
    pub fn finish(&mut self) -> Result<()> {
        if self.train.mode == HeadMode::Multi && !self.heads_explicit {
            self.model.heads = MULTI_HEADS;
        }
        self.model.validate()?;
        self.train.validate()?;
        self.window().validate()?;
        geotraj::data::split_windows(0, self.split, 0)?;
        Ok(())
    }

    pub fn window(&self) -> WindowSpec {
        WindowSpec {
            t_obs: self.model.t_obs,
            t_pred: self.model.t_pred,
            stride: self.stride,
            frame_step: self.frame_step,
        }
    }

    /// Non-model settings as `key = value` text; model settings live in the
    /// checkpoint's own config block.
    pub fn run_text(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let _ = writeln!(s, "epochs = {}", t.epochs);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "lr = {}", t.optimizer.lr);
        let _ = writeln!(s, "weight_decay = {}", t.optimizer.weight_decay);
        let _ = writeln!(s, "lr_decay = {}", t.lr_decay);
        let _ = writeln!(s, "clip_norm = {}", t.clip_norm.map_or("none".into(), |c| c.to_string()));
        let _ = writeln!(s, "mode = {}", t.mode.as_str());
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "augment = {}", t.augment_rotation);
        let _ = writeln!(s, "stride = {}", self.stride);
        let _ = writeln!(s, "frame_step = {}", self.frame_step);
        let _ = writeln!(s, "split = {},{},{}", self.split[0], self.split[1], self.split[2]);
        s
    }

    pub fn describe(&self) -> String {
        format!("{}{}", self.model.to_text(), self.run_text())
    }
}

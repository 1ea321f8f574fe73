use super::{LossKind, TrainError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    /// The learning rate halves every this many steps.
    pub lr_halve_every: u64,
    pub loss: LossKind,
    pub edge_weight: f64,
    pub seed: u64,
    pub val_every: u64,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 16,
            lr: 1e-4,
            lr_halve_every: 200_000,
            loss: LossKind::L1,
            edge_weight: 0.1,
            seed: 0,
            val_every: 100,
            checkpoint_every: 1000,
        }
    }
}

pub const TRAIN_KEYS: &[&str] = &[
    "steps",
    "batch",
    "lr",
    "lr_halve_every",
    "loss",
    "edge_weight",
    "seed",
    "val_every",
    "checkpoint_every",
];

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V, TrainError> {
    value
        .trim()
        .parse()
        .map_err(|_| TrainError::Config(format!("train.{key}: cannot parse `{value}`")))
}

impl TrainConfig {
    /// `steps` may be zero; every other count and the learning rate must be positive.
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |what: &str| Err(TrainError::Config(format!("train.{what} must be positive")));
        if self.batch == 0 {
            return bad("batch");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr");
        }
        if self.lr_halve_every == 0 {
            return bad("lr_halve_every");
        }
        if self.val_every == 0 {
            return bad("val_every");
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every");
        }
        if !(self.edge_weight >= 0.0 && self.edge_weight.is_finite()) {
            return Err(TrainError::Config("train.edge_weight must be a finite value >= 0".into()));
        }
        Ok(())
    }

    /// Learning rate in effect for the update that follows `step` completed steps.
    pub fn lr_at(&self, step: u64) -> f64 {
        let halvings = step / self.lr_halve_every.max(1);
        self.lr * 0.5f64.powi(halvings.min(1000) as i32)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        match key {
            "steps" => self.steps = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lr_halve_every" => self.lr_halve_every = parse(key, value)?,
            "loss" => self.loss = value.trim().parse().map_err(TrainError::Config)?,
            "edge_weight" => self.edge_weight = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "val_every" => self.val_every = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            _ => return Err(TrainError::Config(format!("unknown key train.{key}"))),
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("steps", self.steps.to_string()),
            ("batch", self.batch.to_string()),
            ("lr", self.lr.to_string()),
            ("lr_halve_every", self.lr_halve_every.to_string()),
            ("loss", self.loss.to_string()),
            ("edge_weight", self.edge_weight.to_string()),
            ("seed", self.seed.to_string()),
            ("val_every", self.val_every.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_round_trips_entries() {
        let mut a = TrainConfig::default();
        a.set("lr", "0.002").unwrap();
        a.set("loss", "l1_plus_edge").unwrap();
        a.set("steps", "0").unwrap();
        let mut b = TrainConfig::default();
        for (k, v) in a.entries() {
            b.set(k, &v).unwrap();
        }
        assert_eq!(a, b);
        assert_eq!(a.entries().len(), TRAIN_KEYS.len());
        assert!(b.set("momentum", "0.9").is_err());
        assert!(b.set("batch", "x").is_err());
    }

    #[test]
    fn validation_and_schedule() {
        let mut c = TrainConfig {
            lr: 0.01,
            lr_halve_every: 10,
            ..TrainConfig::default()
        };
        c.validate().unwrap();
        assert_eq!(c.lr_at(0), 0.01);
        assert_eq!(c.lr_at(9), 0.01);
        assert_eq!(c.lr_at(10), 0.005);
        assert_eq!(c.lr_at(25), 0.0025);
        c.batch = 0;
        assert!(c.validate().is_err());
        c.batch = 1;
        c.edge_weight = -1.0;
        assert!(c.validate().is_err());
    }
}

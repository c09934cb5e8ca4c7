//! Synthetic fixtures for tests and benchmarks.
//!
//! [`generate_synthetic`] draws labeled feature vectors from two Gaussian
//! clusters in log-feature space. [`random_user_records`] draws raw user
//! objects for exercising the parsing and feature pipeline end to end.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use super::{DatasetError, LabeledDataset, Sample};
use crate::features::{Feature, FeatureVector, N_FEATURES};
use crate::user_model::{Label, ScreenName, UserRecord};

/// Two-cluster generator parameters. Every non-binary feature `f` is drawn
/// as `log10(1 + x_f) ~ N(center, spread)`, where bots use
/// `human_center + separation`; binary features are Bernoulli per class.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub name: String,
    pub n_bots: usize,
    pub n_humans: usize,
    pub human_center: f64,
    pub separation: f64,
    pub spread: f64,
    pub human_flag_prob: f64,
    pub bot_flag_prob: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            name: "synthetic".into(),
            n_bots: 1000,
            n_humans: 1000,
            human_center: 2.0,
            separation: 1.0,
            spread: 0.5,
            human_flag_prob: 0.5,
            bot_flag_prob: 0.5,
        }
    }
}

const N_CONTINUOUS: usize = N_FEATURES - 3;

impl SyntheticSpec {
    pub fn separable(name: &str, n_per_class: usize) -> Self {
        SyntheticSpec {
            name: name.into(),
            n_bots: n_per_class,
            n_humans: n_per_class,
            separation: 2.0,
            spread: 0.25,
            ..Default::default()
        }
    }

    pub fn indistinguishable(name: &str, n_per_class: usize) -> Self {
        SyntheticSpec {
            name: name.into(),
            n_bots: n_per_class,
            n_humans: n_per_class,
            separation: 0.0,
            ..Default::default()
        }
    }

    /// Mahalanobis distance between the cluster centers over the continuous
    /// features.
    pub fn mahalanobis(&self) -> f64 {
        self.separation.abs() * (N_CONTINUOUS as f64).sqrt() / self.spread
    }

    /// Bayes error of the continuous part, `Φ(-Δ/2)`, ignoring the clamp at
    /// zero (negligible when `human_center` is several spreads above 0).
    pub fn bayes_error(&self) -> f64 {
        let std = StdNormal::new(0.0, 1.0).expect("standard normal");
        std.cdf(-self.mahalanobis() / 2.0)
    }

    fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::Spec(m.to_owned()));
        if self.n_bots == 0 && self.n_humans == 0 {
            return bad("zero samples");
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return bad("spread must be positive");
        }
        if !self.human_center.is_finite() || !self.separation.is_finite() {
            return bad("centers must be finite");
        }
        for p in [self.human_flag_prob, self.bot_flag_prob] {
            if !(0.0..=1.0).contains(&p) {
                return bad("flag probabilities must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<LabeledDataset, DatasetError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.spread).expect("validated spread");
    let n = spec.n_bots + spec.n_humans;
    let samples = (0..n)
        .map(|i| {
            let label = if i < spec.n_bots { Label::Bot } else { Label::Human };
            let (center, p) = match label {
                Label::Bot => (spec.human_center + spec.separation, spec.bot_flag_prob),
                Label::Human => (spec.human_center, spec.human_flag_prob),
            };
            let mut values = [0.0; N_FEATURES];
            for f in Feature::ALL {
                values[f.index()] = if f.is_binary() {
                    if rng.random_bool(p) {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    let z = (center + noise.sample(&mut rng)).max(0.0);
                    if f == Feature::ScreenNameLikelihood {
                        10f64.powf(-z)
                    } else {
                        10f64.powf(z) - 1.0
                    }
                };
            }
            Sample {
                user_id: format!("{}-{i}", spec.name),
                features: FeatureVector(values),
                label,
            }
        })
        .collect();
    Ok(LabeledDataset::new(spec.name.clone(), samples))
}

const SYLLABLES: [&str; 32] = [
    "an", "ma", "ri", "jo", "el", "la", "son", "ka", "te", "lo", "mi", "chel", "da", "vid", "ni",
    "na", "ro", "be", "ca", "sa", "ra", "li", "en", "ton", "mar", "tin", "ja", "ne", "al", "ex",
    "the", "real",
];

/// A plausible human-style screen name: syllables, maybe an underscore, maybe
/// a short number.
pub fn natural_screen_name<R: Rng>(rng: &mut R) -> String {
    let mut name = String::new();
    let parts = rng.random_range(2..=4);
    for i in 0..parts {
        if i > 0 && rng.random_bool(0.15) {
            name.push('_');
        }
        name.push_str(SYLLABLES[rng.random_range(0..SYLLABLES.len())]);
    }
    if rng.random_bool(0.1) {
        let mut chars: Vec<char> = name.chars().collect();
        chars[0] = chars[0].to_ascii_uppercase();
        name = chars.into_iter().collect();
    }
    if rng.random_bool(0.3) {
        name.push_str(&rng.random_range(1..100).to_string());
    }
    name.truncate(15);
    name
}

/// A uniformly random string over the screen-name alphabet.
pub fn random_screen_name<R: Rng>(rng: &mut R, len: usize) -> String {
    let alphabet = crate::screen_name::ALPHABET.as_bytes();
    (0..len)
        .map(|_| alphabet[rng.random_range(0..alphabet.len())] as char)
        .collect()
}

fn log_uniform<R: Rng>(rng: &mut R, max_exp: f64) -> u64 {
    (10f64.powf(rng.random_range(0.0..max_exp)) - 1.0).floor() as u64
}

/// Random user records, half of them bot-like (random screen names, default
/// profiles, many friends). Probe times fall in 2018-2019; accounts are up to
/// ten years old, and a few are probed before or right after creation to
/// exercise the age floor.
pub fn random_user_records(n: usize, seed: u64) -> Vec<(UserRecord, Label)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let epoch: DateTime<Utc> = Utc.with_ymd_and_hms(2018, 1, 1, 0, 0, 0).unwrap();
    let names = ["", "Maria", "José Álvarez", "bot1337", "Crypto 💰 Deals", "Dr. Smith 2nd"];
    let descriptions = ["", "Just me.", "Follow for daily deals!!", "Café ☕ lover · 東京"];
    (0..n)
        .map(|i| {
            let label = if rng.random_bool(0.5) { Label::Bot } else { Label::Human };
            let screen_name = if label.is_bot() && rng.random_bool(0.7) {
                let len = rng.random_range(8..=15);
                random_screen_name(&mut rng, len)
            } else {
                natural_screen_name(&mut rng)
            };
            let probe_time = epoch + Duration::seconds(rng.random_range(0..2 * 365 * 86_400));
            let created_at = match rng.random_range(0..50) {
                0 => probe_time + Duration::minutes(rng.random_range(1..600)),
                1 => probe_time - Duration::minutes(rng.random_range(0..60)),
                _ => probe_time - Duration::seconds(rng.random_range(3600..10 * 365 * 86_400)),
            };
            let friends_exp = if label.is_bot() { 4.5 } else { 3.5 };
            let record = UserRecord {
                user_id: format!("{}", 10_000_000 + i as u64),
                screen_name: ScreenName::new(&screen_name).expect("generator emits valid names"),
                name: names[rng.random_range(0..names.len())].to_owned(),
                description: descriptions[rng.random_range(0..descriptions.len())].to_owned(),
                statuses_count: log_uniform(&mut rng, 6.0),
                followers_count: log_uniform(&mut rng, 6.5),
                friends_count: if rng.random_bool(0.05) {
                    0
                } else {
                    log_uniform(&mut rng, friends_exp)
                },
                favourites_count: log_uniform(&mut rng, 5.0),
                listed_count: log_uniform(&mut rng, 3.0),
                default_profile: rng.random_bool(if label.is_bot() { 0.7 } else { 0.3 }),
                profile_use_background_image: rng.random_bool(0.6),
                verified: !label.is_bot() && rng.random_bool(0.05),
                created_at,
                probe_time,
            };
            (record, label)
        })
        .collect()
}

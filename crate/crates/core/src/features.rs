//! The 20-dimensional user-metadata feature vector.

use std::fmt;
use std::io::{Read, Write};
use std::ops::Index;

use thiserror::Error;

use crate::screen_name::BigramModel;
use crate::user_model::{Label, UserRecord};

pub const N_FEATURES: usize = 20;

/// Version of the canonical feature order; model files record it.
pub const FEATURE_ORDER_VERSION: u32 = 1;

/// Minimum user age in hours used when deriving rate features.
pub const MIN_AGE_HOURS: f64 = 1.0;

/// Canonical feature order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(usize)]
pub enum Feature {
    StatusesCount,
    FollowersCount,
    FriendsCount,
    FavouritesCount,
    ListedCount,
    DefaultProfile,
    ProfileUseBackgroundImage,
    Verified,
    TweetFreq,
    FollowersGrowthRate,
    FriendsGrowthRate,
    FavouritesGrowthRate,
    ListedGrowthRate,
    FollowersFriendsRatio,
    ScreenNameLength,
    NumDigitsInScreenName,
    NameLength,
    NumDigitsInName,
    DescriptionLength,
    ScreenNameLikelihood,
}

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "statuses_count",
    "followers_count",
    "friends_count",
    "favourites_count",
    "listed_count",
    "default_profile",
    "profile_use_background_image",
    "verified",
    "tweet_freq",
    "followers_growth_rate",
    "friends_growth_rate",
    "favourites_growth_rate",
    "listed_growth_rate",
    "followers_friends_ratio",
    "screen_name_length",
    "num_digits_in_screen_name",
    "name_length",
    "num_digits_in_name",
    "description_length",
    "screen_name_likelihood",
];

impl Feature {
    pub const ALL: [Feature; N_FEATURES] = [
        Feature::StatusesCount,
        Feature::FollowersCount,
        Feature::FriendsCount,
        Feature::FavouritesCount,
        Feature::ListedCount,
        Feature::DefaultProfile,
        Feature::ProfileUseBackgroundImage,
        Feature::Verified,
        Feature::TweetFreq,
        Feature::FollowersGrowthRate,
        Feature::FriendsGrowthRate,
        Feature::FavouritesGrowthRate,
        Feature::ListedGrowthRate,
        Feature::FollowersFriendsRatio,
        Feature::ScreenNameLength,
        Feature::NumDigitsInScreenName,
        Feature::NameLength,
        Feature::NumDigitsInName,
        Feature::DescriptionLength,
        Feature::ScreenNameLikelihood,
    ];

    pub const RATES: [Feature; 5] = [
        Feature::TweetFreq,
        Feature::FollowersGrowthRate,
        Feature::FriendsGrowthRate,
        Feature::FavouritesGrowthRate,
        Feature::ListedGrowthRate,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        FEATURE_NAMES[self.index()]
    }

    pub fn from_name(name: &str) -> Option<Feature> {
        FEATURE_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| Feature::ALL[i])
    }

    pub fn is_binary(self) -> bool {
        matches!(
            self,
            Feature::DefaultProfile | Feature::ProfileUseBackgroundImage | Feature::Verified
        )
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The 20 features in canonical order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; N_FEATURES]);

impl FeatureVector {
    pub fn as_array(&self) -> &[f64; N_FEATURES] {
        &self.0
    }

    pub fn get(&self, feature: Feature) -> f64 {
        self.0[feature.index()]
    }

    pub fn set(&mut self, feature: Feature, value: f64) {
        self.0[feature.index()] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Index<usize> for FeatureVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl Index<Feature> for FeatureVector {
    type Output = f64;

    fn index(&self, f: Feature) -> &f64 {
        &self.0[f.index()]
    }
}

/// Hours between account creation and observation, floored at one hour.
pub fn user_age_hours(record: &UserRecord) -> f64 {
    let millis = (record.probe_time - record.created_at).num_milliseconds() as f64;
    (millis / 3_600_000.0).max(MIN_AGE_HOURS)
}

fn ascii_digits(s: &str) -> usize {
    s.bytes().filter(u8::is_ascii_digit).count()
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

pub fn extract_features(record: &UserRecord, bigrams: &BigramModel) -> FeatureVector {
    let age = user_age_hours(record);
    let statuses = record.statuses_count as f64;
    let followers = record.followers_count as f64;
    let friends = record.friends_count as f64;
    let favourites = record.favourites_count as f64;
    let listed = record.listed_count as f64;
    let screen_name = record.screen_name.as_str();

    FeatureVector([
        statuses,
        followers,
        friends,
        favourites,
        listed,
        flag(record.default_profile),
        flag(record.profile_use_background_image),
        flag(record.verified),
        statuses / age,
        followers / age,
        friends / age,
        favourites / age,
        listed / age,
        followers / friends.max(1.0),
        screen_name.chars().count() as f64,
        ascii_digits(screen_name) as f64,
        record.name.chars().count() as f64,
        ascii_digits(&record.name) as f64,
        record.description.chars().count() as f64,
        bigrams.likelihood(&record.screen_name),
    ])
}

#[derive(Debug, Error)]
pub enum FeatureCsvError {
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("header is missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
}

/// One row of a feature dump.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub user_id: String,
    pub features: FeatureVector,
    pub label: Option<Label>,
}

/// Writes feature dumps: `user_id`, the 20 canonical columns, then `label`
/// when requested. Floats use the shortest round-trip representation.
pub struct FeatureCsvWriter<W: Write> {
    inner: csv::Writer<W>,
    with_label: bool,
}

impl<W: Write> FeatureCsvWriter<W> {
    pub fn new(writer: W, with_label: bool) -> Result<Self, FeatureCsvError> {
        let mut inner = csv::Writer::from_writer(writer);
        let mut header = vec!["user_id"];
        header.extend(FEATURE_NAMES);
        if with_label {
            header.push("label");
        }
        inner.write_record(&header)?;
        Ok(FeatureCsvWriter { inner, with_label })
    }

    pub fn write(
        &mut self,
        user_id: &str,
        features: &FeatureVector,
        label: Option<Label>,
    ) -> Result<(), FeatureCsvError> {
        let mut fields = Vec::with_capacity(N_FEATURES + 2);
        fields.push(user_id.to_owned());
        fields.extend(features.0.iter().map(|v| v.to_string()));
        if self.with_label {
            fields.push(label.map(|l| l.as_str().to_owned()).unwrap_or_default());
        }
        self.inner.write_record(&fields)?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W, FeatureCsvError> {
        self.inner
            .into_inner()
            .map_err(|e| FeatureCsvError::Csv(csv::Error::from(e.into_error())))
    }
}

/// Reads a feature dump. Columns are located by header name; the `label`
/// column is optional and may hold empty cells.
pub struct FeatureCsvReader<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    user_id_col: usize,
    feature_cols: [usize; N_FEATURES],
    label_col: Option<usize>,
    row: usize,
}

impl<R: Read> FeatureCsvReader<R> {
    pub fn new(reader: R) -> Result<Self, FeatureCsvError> {
        let mut inner = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
        let header = inner.headers()?.clone();
        let find = |name: &str| header.iter().position(|h| h.trim() == name);
        let user_id_col =
            find("user_id").ok_or_else(|| FeatureCsvError::MissingColumn("user_id".into()))?;
        let mut feature_cols = [0usize; N_FEATURES];
        for (slot, name) in feature_cols.iter_mut().zip(FEATURE_NAMES) {
            *slot = find(name).ok_or_else(|| FeatureCsvError::MissingColumn(name.into()))?;
        }
        Ok(FeatureCsvReader {
            records: inner.into_records(),
            user_id_col,
            feature_cols,
            label_col: find("label"),
            row: 1,
        })
    }

    pub fn has_label_column(&self) -> bool {
        self.label_col.is_some()
    }

    fn parse_row(&self, record: &csv::StringRecord) -> Result<FeatureRow, String> {
        let cell = |i: usize| record.get(i).ok_or_else(|| format!("missing column {i}"));
        let user_id = cell(self.user_id_col)?.to_owned();
        let mut values = [0.0; N_FEATURES];
        for (f, (&col, value)) in self.feature_cols.iter().zip(values.iter_mut()).enumerate() {
            let raw = cell(col)?;
            *value = raw
                .trim()
                .parse::<f64>()
                .map_err(|_| format!("{}: not a number: {raw:?}", FEATURE_NAMES[f]))?;
            if !value.is_finite() {
                return Err(format!("{}: non-finite value {raw:?}", FEATURE_NAMES[f]));
            }
        }
        let label = match self.label_col {
            Some(col) => match cell(col)?.trim() {
                "" => None,
                raw => Some(raw.parse::<Label>()?),
            },
            None => None,
        };
        Ok(FeatureRow {
            user_id,
            features: FeatureVector(values),
            label,
        })
    }
}

impl<R: Read> Iterator for FeatureCsvReader<R> {
    type Item = Result<FeatureRow, FeatureCsvError>;

    fn next(&mut self) -> Option<Self::Item> {
        let record = self.records.next()?;
        self.row += 1;
        let row = self.row;
        Some(match record {
            Err(e) => Err(FeatureCsvError::Csv(e)),
            Ok(record) => self
                .parse_row(&record)
                .map_err(|message| FeatureCsvError::Row { row, message }),
        })
    }
}

//! Synthetic domain-grid dataset and seen/unseen train-test splitting.
//!
//! A dataset is an ordered list of labeled samples, each tied to a domain
//! identified by a `(weather, viewpoint, town)` triple. The synthetic
//! generator emulates that structure at desk scale: per-pixel features are
//! a class prototype plus an additive per-domain offset plus Gaussian
//! noise, and labels are drawn block-wise from a per-domain class
//! frequency profile so that batch statistics differ meaningfully across
//! domains.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Reserved label value excluded from loss, metrics, and class presence.
pub const IGNORE_LABEL: i32 = -1;

/// Side length of the constant-label blocks drawn by the synthetic
/// generator. Block-constant labels keep per-batch class mixtures (and so
/// batch-normalization statistics) varied across domains.
pub const LABEL_BLOCK: usize = 4;

/// One domain of the grid: a `(weather, viewpoint, town)` triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DomainKey {
    pub weather: usize,
    pub viewpoint: usize,
    pub town: usize,
}

/// Extent of the domain grid along each axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridDims {
    pub n_weathers: usize,
    pub n_viewpoints: usize,
    pub n_towns: usize,
}

impl GridDims {
    pub fn new(n_weathers: usize, n_viewpoints: usize, n_towns: usize) -> Self {
        Self {
            n_weathers,
            n_viewpoints,
            n_towns,
        }
    }

    pub fn n_domains(&self) -> usize {
        self.n_weathers * self.n_viewpoints * self.n_towns
    }

    pub fn contains(&self, key: DomainKey) -> bool {
        key.weather < self.n_weathers
            && key.viewpoint < self.n_viewpoints
            && key.town < self.n_towns
    }

    /// Row-major linear index of a domain, used to derive per-domain
    /// random substreams.
    pub fn linear_index(&self, key: DomainKey) -> usize {
        (key.weather * self.n_viewpoints + key.viewpoint) * self.n_towns + key.town
    }

    /// All domain keys in row-major (weather, viewpoint, town) order.
    pub fn keys(&self) -> impl Iterator<Item = DomainKey> + '_ {
        let (nv, nt) = (self.n_viewpoints, self.n_towns);
        (0..self.n_domains()).map(move |i| DomainKey {
            weather: i / (nv * nt),
            viewpoint: (i / nt) % nv,
            town: i % nt,
        })
    }
}

/// Grid axis selector for unseen-domain predicates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainAxis {
    Weather,
    Viewpoint,
    Town,
}

impl DomainAxis {
    pub fn of(&self, key: DomainKey) -> usize {
        match self {
            DomainAxis::Weather => key.weather,
            DomainAxis::Viewpoint => key.viewpoint,
            DomainAxis::Town => key.town,
        }
    }
}

/// Predicate matching every domain whose `axis` coordinate equals `index`.
pub fn axis_predicate(axis: DomainAxis, index: usize) -> impl Fn(DomainKey) -> bool {
    move |key| axis.of(key) == index
}

/// One labeled image: per-pixel feature vectors plus per-pixel class
/// labels, tied to a domain.
///
/// `features` is row-major `height * width * feature_dim` and may be empty
/// for label-only use (partitioning does not need features). `labels` is
/// row-major `height * width`, each entry in `[0, n_classes)` or
/// [`IGNORE_LABEL`].
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub domain: DomainKey,
    pub height: usize,
    pub width: usize,
    pub features: Vec<f64>,
    pub labels: Vec<i32>,
}

impl Sample {
    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn has_features(&self) -> bool {
        !self.features.is_empty()
    }

    /// Feature vector of one pixel; requires features to be present.
    pub fn feature_row(&self, pixel: usize, feature_dim: usize) -> &[f64] {
        &self.features[pixel * feature_dim..(pixel + 1) * feature_dim]
    }
}

/// An ordered collection of samples over a domain grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub n_classes: usize,
    pub feature_dim: usize,
    pub grid: GridDims,
}

impl Dataset {
    /// Build a dataset, validating the structural invariants: unique
    /// sample ids, in-grid domains, consistent grid shapes, and label
    /// values within `[0, n_classes)` or [`IGNORE_LABEL`].
    pub fn new(
        samples: Vec<Sample>,
        n_classes: usize,
        feature_dim: usize,
        grid: GridDims,
    ) -> Result<Self> {
        let mut seen_ids = BTreeSet::new();
        for sample in &samples {
            if !seen_ids.insert(sample.id.as_str()) {
                return Err(Error::Data(format!("duplicate sample id '{}'", sample.id)));
            }
            if !grid.contains(sample.domain) {
                return Err(Error::Data(format!(
                    "sample '{}' has domain ({}, {}, {}) outside grid ({}, {}, {})",
                    sample.id,
                    sample.domain.weather,
                    sample.domain.viewpoint,
                    sample.domain.town,
                    grid.n_weathers,
                    grid.n_viewpoints,
                    grid.n_towns
                )));
            }
            let n_pixels = sample.n_pixels();
            if sample.labels.len() != n_pixels {
                return Err(Error::Data(format!(
                    "sample '{}': label grid has {} entries, expected {}x{}",
                    sample.id,
                    sample.labels.len(),
                    sample.height,
                    sample.width
                )));
            }
            if sample.has_features() && sample.features.len() != n_pixels * feature_dim {
                return Err(Error::Data(format!(
                    "sample '{}': feature grid has {} entries, expected {}x{}x{}",
                    sample.id,
                    sample.features.len(),
                    sample.height,
                    sample.width,
                    feature_dim
                )));
            }
            for &label in &sample.labels {
                if label != IGNORE_LABEL && (label < 0 || label as usize >= n_classes) {
                    return Err(Error::Data(format!(
                        "sample '{}': label {} outside [0, {})",
                        sample.id, label, n_classes
                    )));
                }
            }
        }
        Ok(Self {
            samples,
            n_classes,
            feature_dim,
            grid,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Map from sample id to position in `samples`.
    pub fn index_by_id(&self) -> BTreeMap<&str, usize> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect()
    }

    /// Distinct domains present, in key order.
    pub fn domains_present(&self) -> BTreeSet<DomainKey> {
        self.samples.iter().map(|s| s.domain).collect()
    }

    fn with_samples(&self, samples: Vec<Sample>) -> Dataset {
        Dataset {
            samples,
            n_classes: self.n_classes,
            feature_dim: self.feature_dim,
            grid: self.grid,
        }
    }
}

/// Declarative description of a synthetic domain-grid dataset.
///
/// Feature model per pixel: `prototype(class) + offset(domain) + noise`,
/// where the domain offset is the sum of one deterministic pseudo-random
/// component per grid axis, scaled by `domain_shift`, so domains sharing
/// an axis value partially overlap.
///
/// Label model: each domain draws block-constant labels (see
/// [`LABEL_BLOCK`]) from a per-domain class frequency profile. By default
/// a profile zeroes `zeroed_classes_per_town` classes, rotating with the
/// town index, and weights the rest by seeded random factors; explicit
/// `profiles` (one per domain in linear-index order) override that scheme.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub grid: GridDims,
    pub images_per_domain: usize,
    pub height: usize,
    pub width: usize,
    pub feature_dim: usize,
    pub n_classes: usize,
    pub class_separation: f64,
    pub domain_shift: f64,
    pub noise_std: f64,
    pub zeroed_classes_per_town: usize,
    pub profiles: Option<Vec<Vec<f64>>>,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.grid.n_domains() == 0 {
            return Err(Error::Config("synthetic grid has a zero dimension".into()));
        }
        if self.images_per_domain == 0 {
            return Err(Error::Config("images_per_domain must be >= 1".into()));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("image height and width must be >= 1".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be >= 1".into()));
        }
        if self.n_classes == 0 {
            return Err(Error::Config("n_classes must be >= 1".into()));
        }
        if self.zeroed_classes_per_town >= self.n_classes {
            return Err(Error::Config(format!(
                "zeroed_classes_per_town {} must leave at least one class of {}",
                self.zeroed_classes_per_town, self.n_classes
            )));
        }
        if !self.class_separation.is_finite()
            || !self.domain_shift.is_finite()
            || !self.noise_std.is_finite()
            || self.noise_std < 0.0
        {
            return Err(Error::Config(
                "class_separation, domain_shift, and noise_std must be finite (noise_std >= 0)"
                    .into(),
            ));
        }
        if let Some(profiles) = &self.profiles {
            if profiles.len() != self.grid.n_domains() {
                return Err(Error::Config(format!(
                    "expected {} per-domain profiles, got {}",
                    self.grid.n_domains(),
                    profiles.len()
                )));
            }
            for (d, profile) in profiles.iter().enumerate() {
                if profile.len() != self.n_classes {
                    return Err(Error::Config(format!(
                        "profile for domain {} has {} entries, expected {}",
                        d,
                        profile.len(),
                        self.n_classes
                    )));
                }
                if profile.iter().any(|&p| !p.is_finite() || p < 0.0) {
                    return Err(Error::Config(format!(
                        "profile for domain {d} has a negative or non-finite entry"
                    )));
                }
                if profile.iter().sum::<f64>() <= 0.0 {
                    return Err(Error::Config(format!(
                        "profile for domain {d} is not normalizable (sums to zero)"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The class frequency profile of one domain, normalized to sum to 1
    /// over its non-zeroed classes.
    fn profile_for(&self, key: DomainKey) -> Vec<f64> {
        let mut profile = match &self.profiles {
            Some(profiles) => profiles[self.grid.linear_index(key)].clone(),
            None => {
                let mut rng = StreamRng::new(self.seed, "class-profiles")
                    .derive(self.grid.linear_index(key) as u64);
                let zeroed: BTreeSet<usize> = (0..self.zeroed_classes_per_town)
                    .map(|j| (self.zeroed_classes_per_town * key.town + j) % self.n_classes)
                    .collect();
                (0..self.n_classes)
                    .map(|c| {
                        let w = 0.5 + rng.next_f64();
                        if zeroed.contains(&c) {
                            0.0
                        } else {
                            w
                        }
                    })
                    .collect()
            }
        };
        let total: f64 = profile.iter().sum();
        for p in &mut profile {
            *p /= total;
        }
        profile
    }
}

/// Draw a class index from a normalized frequency profile.
fn draw_class(profile: &[f64], rng: &mut StreamRng) -> usize {
    let u = rng.next_f64();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (c, &p) in profile.iter().enumerate() {
        if p > 0.0 {
            last_positive = c;
            acc += p;
            if u < acc {
                return c;
            }
        }
    }
    // u landed in the rounding tail; attribute it to the last usable class
    last_positive
}

/// Generate the synthetic dataset described by `spec`.
///
/// Deterministic given `spec.seed`: every domain, image, and pixel draws
/// from its own derived substream, so the sample stream is bit-identical
/// across runs and platforms.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let f_dim = spec.feature_dim;

    let proto_rng = StreamRng::new(spec.seed, "class-prototypes");
    let prototypes: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|c| {
            let mut rng = proto_rng.derive(c as u64);
            (0..f_dim)
                .map(|_| spec.class_separation * rng.normal())
                .collect()
        })
        .collect();

    // One additive offset component per axis value; a domain's offset is
    // the sum of its three components.
    let axis_rng = StreamRng::new(spec.seed, "domain-offsets");
    let axis_components = |axis: u64, n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let mut rng = axis_rng.derive(axis).derive(i as u64);
                (0..f_dim)
                    .map(|_| spec.domain_shift * rng.normal())
                    .collect()
            })
            .collect()
    };
    let weather_offsets = axis_components(0, spec.grid.n_weathers);
    let viewpoint_offsets = axis_components(1, spec.grid.n_viewpoints);
    let town_offsets = axis_components(2, spec.grid.n_towns);

    let sample_rng = StreamRng::new(spec.seed, "samples");
    let n_pixels = spec.height * spec.width;
    let mut samples = Vec::with_capacity(spec.grid.n_domains() * spec.images_per_domain);

    for key in spec.grid.keys() {
        let profile = spec.profile_for(key);
        let domain_idx = spec.grid.linear_index(key) as u64;
        let mut offset = vec![0.0; f_dim];
        for f in 0..f_dim {
            offset[f] = weather_offsets[key.weather][f]
                + viewpoint_offsets[key.viewpoint][f]
                + town_offsets[key.town][f];
        }

        for img in 0..spec.images_per_domain {
            let mut rng = sample_rng.derive(domain_idx).derive(img as u64);

            // labels first (block-constant), then feature noise, in a
            // fixed order so the stream layout is stable
            let mut labels = vec![0i32; n_pixels];
            let mut row = 0;
            while row < spec.height {
                let mut col = 0;
                while col < spec.width {
                    let class = draw_class(&profile, &mut rng) as i32;
                    for r in row..(row + LABEL_BLOCK).min(spec.height) {
                        for c in col..(col + LABEL_BLOCK).min(spec.width) {
                            labels[r * spec.width + c] = class;
                        }
                    }
                    col += LABEL_BLOCK;
                }
                row += LABEL_BLOCK;
            }

            let mut features = vec![0.0; n_pixels * f_dim];
            for p in 0..n_pixels {
                let proto = &prototypes[labels[p] as usize];
                for f in 0..f_dim {
                    features[p * f_dim + f] = proto[f] + offset[f] + spec.noise_std * rng.normal();
                }
            }

            samples.push(Sample {
                id: format!(
                    "w{}_v{}_t{}_img{}",
                    key.weather, key.viewpoint, key.town, img
                ),
                domain: key,
                height: spec.height,
                width: spec.width,
                features,
                labels,
            });
        }
    }

    Dataset::new(samples, spec.n_classes, f_dim, spec.grid)
}

/// A seen/unseen train-test split.
///
/// The three sample-id sets are pairwise disjoint and cover the source
/// dataset; every unseen sample's domain satisfies the predicate used to
/// build the split, and no train or seen-test sample's domain does.
#[derive(Clone, Debug)]
pub struct SplitResult {
    pub train: Dataset,
    pub seen_test: Dataset,
    pub unseen_test: Dataset,
}

/// Split a dataset into train / seen-test / unseen-test sets.
///
/// Domains matching `unseen_predicate` go to the unseen test set in
/// full. From every remaining domain, exactly `seen_per_domain` images
/// are drawn uniformly without replacement (seeded per domain) into the
/// seen test set; the rest form the training set. Source order is
/// preserved within each subset.
pub fn split_seen_unseen<P>(
    dataset: &Dataset,
    unseen_predicate: P,
    seen_per_domain: usize,
    seed: u64,
) -> Result<SplitResult>
where
    P: Fn(DomainKey) -> bool,
{
    #[derive(Clone, Copy, PartialEq)]
    enum Dest {
        Train,
        Seen,
        Unseen,
    }

    let mut dest = vec![Dest::Train; dataset.len()];
    let mut retained: BTreeMap<DomainKey, Vec<usize>> = BTreeMap::new();
    for (i, sample) in dataset.samples.iter().enumerate() {
        if unseen_predicate(sample.domain) {
            dest[i] = Dest::Unseen;
        } else {
            retained.entry(sample.domain).or_default().push(i);
        }
    }

    let rng = StreamRng::new(seed, "seen-test");
    for (key, members) in &retained {
        if members.len() < seen_per_domain {
            return Err(Error::Split(format!(
                "retained domain ({}, {}, {}) has {} images, fewer than seen_per_domain {}",
                key.weather,
                key.viewpoint,
                key.town,
                members.len(),
                seen_per_domain
            )));
        }
        let mut domain_rng = rng.derive(dataset.grid.linear_index(*key) as u64);
        for pick in domain_rng.sample_indices(members.len(), seen_per_domain) {
            dest[members[pick]] = Dest::Seen;
        }
    }

    let collect = |wanted: Dest| -> Vec<Sample> {
        dataset
            .samples
            .iter()
            .zip(&dest)
            .filter(|(_, &d)| d == wanted)
            .map(|(s, _)| s.clone())
            .collect()
    };

    Ok(SplitResult {
        train: dataset.with_samples(collect(Dest::Train)),
        seen_test: dataset.with_samples(collect(Dest::Seen)),
        unseen_test: dataset.with_samples(collect(Dest::Unseen)),
    })
}

/// The set of classes with at least one non-ignore pixel in the sample.
pub fn class_presence(sample: &Sample) -> BTreeSet<usize> {
    sample
        .labels
        .iter()
        .filter(|&&l| l != IGNORE_LABEL)
        .map(|&l| l as usize)
        .collect()
}

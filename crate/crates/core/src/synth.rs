//! Deterministic synthetic browsing corpus with multi-device users.
//!
//! Pages `0..vocab_size` are split into `profile_dim` contiguous topics.
//! Each user has a sparse topic mixture and per-page affinities; each device
//! blends the user's profile with a fresh random one by `noise` and then
//! emits a first-order Markov sequence: with probability `stay_prob` the
//! next page is drawn from the current page's topic, otherwise from the
//! device's full page distribution.
//!
//! Each topic's pages are spread round-robin over `sites_per_topic` sites.
//! A URL is the token pair `[site, path]`: pages of one site share the site
//! token the way real URLs share a domain, and path tokens are shared by
//! all sites. The pair identifies the page uniquely, but the token
//! vocabulary stays small.

use std::collections::{BTreeMap, BTreeSet};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, Geometric, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DeviceLog, Event, UrlKey};
use crate::io::DevicePair;
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub devices_per_user: usize,
    pub mean_log_len: usize,
    /// Number of distinct pages.
    pub vocab_size: usize,
    /// Number of topics.
    pub profile_dim: usize,
    /// Cross-device divergence in [0, 1]; 0 gives identical devices.
    pub noise: f64,
    pub seed: u64,
    /// Dirichlet concentration of user topic mixtures.
    pub topic_concentration: f64,
    /// Probability of staying within the current topic.
    pub stay_prob: f64,
    /// Exponent of the global Zipf page popularity.
    pub zipf_exponent: f64,
    /// Log-space spread of per-user page affinities.
    pub affinity_sigma: f64,
    /// Negatives sampled per positive pair.
    pub neg_ratio: f64,
    /// Sites per topic; each contributes one URL token.
    pub sites_per_topic: usize,
    /// Fraction of `noise` applied to the topic mixture (page affinities get
    /// the full `noise`). The default 0 keeps a user's devices on the same
    /// topics and lets them diverge only in which pages they favour.
    pub topic_noise_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 500,
            devices_per_user: 2,
            mean_log_len: 197,
            vocab_size: 8192,
            profile_dim: 16,
            noise: 0.5,
            seed: 0,
            topic_concentration: 0.1,
            stay_prob: 0.6,
            zipf_exponent: 0.5,
            affinity_sigma: 1.5,
            neg_ratio: 1.0,
            sites_per_topic: 4,
            topic_noise_scale: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.n_users < 1 || self.devices_per_user < 1 || self.mean_log_len < 1 {
            return bad("n_users, devices_per_user and mean_log_len must be >= 1".into());
        }
        if self.profile_dim < 1 || self.vocab_size < 1 || self.sites_per_topic < 1 {
            return bad("vocab_size, profile_dim and sites_per_topic must be >= 1".into());
        }
        if self.vocab_size < self.profile_dim {
            return bad(format!(
                "vocab_size ({}) must be at least profile_dim ({})",
                self.vocab_size, self.profile_dim
            ));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return bad(format!("noise must lie in [0, 1], got {}", self.noise));
        }
        if !(0.0..=1.0).contains(&self.topic_noise_scale) {
            return bad(format!("topic_noise_scale must lie in [0, 1], got {}", self.topic_noise_scale));
        }
        if !(0.0..=1.0).contains(&self.stay_prob) {
            return bad(format!("stay_prob must lie in [0, 1], got {}", self.stay_prob));
        }
        if !(self.topic_concentration > 0.0) || !(self.affinity_sigma >= 0.0) || !(self.neg_ratio >= 0.0) {
            return bad("topic_concentration must be > 0; affinity_sigma, neg_ratio >= 0".into());
        }
        Ok(())
    }

    /// Topic of page `p`; topics are contiguous, near-equal blocks.
    pub fn topic_of(&self, page: usize) -> usize {
        page * self.profile_dim / self.vocab_size
    }

    fn site_count(&self) -> usize {
        self.profile_dim * self.sites_per_topic
    }

    fn paths_per_site(&self) -> usize {
        self.vocab_size.div_ceil(self.profile_dim).div_ceil(self.sites_per_topic)
    }

    /// Token vocabulary needed by a model: site tokens then path tokens.
    pub fn token_vocab_size(&self) -> usize {
        self.site_count() + self.paths_per_site()
    }

    /// URL tokens `[site, path]` of page `p`.
    pub fn url_tokens(&self, page: usize) -> Vec<u32> {
        let t = self.topic_of(page);
        let local = page - self.topic_range(t).start;
        let site = t * self.sites_per_topic + local % self.sites_per_topic;
        let path = local / self.sites_per_topic;
        vec![site as u32, (self.site_count() + path) as u32]
    }

    /// Inverse of [`url_tokens`](Self::url_tokens).
    pub fn page_of(&self, tokens: &[u32]) -> Option<usize> {
        let [site, path] = *tokens else { return None };
        let (site, path) = (site as usize, (path as usize).checked_sub(self.site_count())?);
        if site >= self.site_count() || path >= self.paths_per_site() {
            return None;
        }
        let t = site / self.sites_per_topic;
        let local = path * self.sites_per_topic + site % self.sites_per_topic;
        let r = self.topic_range(t);
        (local < r.len()).then(|| r.start + local)
    }

    fn topic_range(&self, t: usize) -> std::ops::Range<usize> {
        let start = (t * self.vocab_size).div_ceil(self.profile_dim);
        let end = ((t + 1) * self.vocab_size).div_ceil(self.profile_dim);
        start..end
    }
}

/// A user's or device's browsing profile.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    /// Topic mixture, sums to 1.
    pub topics: Vec<f64>,
    /// Positive per-page weights (popularity × affinity).
    pub pages: Vec<f64>,
}

/// Markov sampler for one profile.
pub struct DeviceSampler {
    /// Page distribution restricted to each topic (page offsets local to the
    /// topic range).
    within: Vec<WeightedIndex<f64>>,
    starts: Vec<usize>,
    overall: WeightedIndex<f64>,
    stay_prob: f64,
    profile_dim: usize,
    vocab_size: usize,
}

impl DeviceSampler {
    pub fn new(cfg: &SynthConfig, p: &Profile) -> Result<Self> {
        let mut within = Vec::with_capacity(cfg.profile_dim);
        let mut starts = Vec::with_capacity(cfg.profile_dim);
        let mut overall = Vec::with_capacity(cfg.vocab_size);
        for t in 0..cfg.profile_dim {
            let r = cfg.topic_range(t);
            let w = &p.pages[r.clone()];
            let total: f64 = w.iter().sum();
            within.push(WeightedIndex::new(w).map_err(|e| Error::config(format!("topic {t}: {e}")))?);
            starts.push(r.start);
            overall.extend(w.iter().map(|x| p.topics[t] * x / total));
        }
        Ok(DeviceSampler {
            within,
            starts,
            overall: WeightedIndex::new(&overall).map_err(|e| Error::config(e.to_string()))?,
            stay_prob: cfg.stay_prob,
            profile_dim: cfg.profile_dim,
            vocab_size: cfg.vocab_size,
        })
    }

    /// Probability of moving from `from` to `to`.
    pub fn transition_prob(&self, cfg: &SynthConfig, p: &Profile, from: usize, to: usize) -> f64 {
        let t = cfg.topic_of(to);
        let r = cfg.topic_range(t);
        let total: f64 = p.pages[r].iter().sum();
        let within = p.pages[to] / total;
        let stay = if cfg.topic_of(from) == t { self.stay_prob * within } else { 0.0 };
        stay + (1.0 - self.stay_prob) * p.topics[t] * within
    }

    pub fn sample_sequence<R: Rng>(&self, rng: &mut R, len: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(len);
        let mut cur = self.overall.sample(rng);
        out.push(cur);
        while out.len() < len {
            cur = if rng.random::<f64>() < self.stay_prob {
                let t = cur * self.profile_dim / self.vocab_size;
                self.starts[t] + self.within[t].sample(rng)
            } else {
                self.overall.sample(rng)
            };
            out.push(cur);
        }
        out
    }
}

fn dirichlet<R: Rng>(rng: &mut R, dim: usize, alpha: f64) -> Vec<f64> {
    let g = Gamma::new(alpha, 1.0).expect("alpha > 0");
    loop {
        let v: Vec<f64> = (0..dim).map(|_| g.sample(rng)).collect();
        let s: f64 = v.iter().sum();
        if s > 0.0 {
            return v.into_iter().map(|x| x / s).collect();
        }
    }
}

fn random_profile<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let topics = dirichlet(rng, cfg.profile_dim, cfg.topic_concentration);
    let aff = Normal::new(0.0, cfg.affinity_sigma).expect("sigma >= 0");
    let log_aff: Vec<f64> = (0..cfg.vocab_size).map(|_| aff.sample(rng)).collect();
    (topics, log_aff)
}

/// Global Zipf popularity, ranked within each topic so that every topic
/// has its own head of popular pages.
pub fn page_popularity(cfg: &SynthConfig) -> Vec<f64> {
    (0..cfg.vocab_size)
        .map(|p| {
            let rank = p - cfg.topic_range(cfg.topic_of(p)).start + 1;
            (rank as f64).powf(-cfg.zipf_exponent)
        })
        .collect()
}

/// Blends a user profile with a random one: linearly for topic weights (by
/// `noise · topic_noise_scale`) and in log space for page affinities (by
/// `noise`). `noise = 0` returns the user profile.
pub fn device_profile(
    cfg: &SynthConfig,
    popularity: &[f64],
    user: &(Vec<f64>, Vec<f64>),
    other: &(Vec<f64>, Vec<f64>),
) -> Profile {
    let n = cfg.noise;
    let nt = n * cfg.topic_noise_scale;
    let topics = if nt == 0.0 {
        user.0.clone()
    } else {
        user.0.iter().zip(&other.0).map(|(u, o)| (1.0 - nt) * u + nt * o).collect()
    };
    let pages = (0..cfg.vocab_size)
        .map(|p| {
            let la = if n == 0.0 {
                user.1[p]
            } else {
                (1.0 - n) * user.1[p] + n * other.1[p]
            };
            popularity[p] * la.exp()
        })
        .collect();
    Profile { topics, pages }
}

fn log_length<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> usize {
    let base = cfg.mean_log_len.min(10);
    let extra = cfg.mean_log_len - base;
    if extra == 0 {
        return base;
    }
    let g = Geometric::new(1.0 / (extra as f64 + 1.0)).expect("p in (0, 1]");
    let len = base + g.sample(rng) as usize;
    len.min(5 * cfg.mean_log_len)
}

pub fn user_id(u: usize) -> String {
    format!("u{u:05}")
}

pub fn device_id(u: usize, d: usize) -> String {
    format!("u{u:05}-d{d}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub logs: Vec<DeviceLog>,
    pub pairs: Vec<DevicePair>,
    /// Device id → user id.
    pub user_of: BTreeMap<String, String>,
}

/// Generates logs for every device plus all positive pairs and
/// `neg_ratio`-many random cross-user negatives.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let popularity = page_popularity(cfg);
    let mut logs = Vec::with_capacity(cfg.n_users * cfg.devices_per_user);
    let mut user_of = BTreeMap::new();
    for u in 0..cfg.n_users {
        // Each user gets an independent stream, so users do not shift when
        // n_users changes.
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "synth.user"));
        rng.set_stream(u as u64);
        let user = random_profile(cfg, &mut rng);
        for d in 0..cfg.devices_per_user {
            let other = random_profile(cfg, &mut rng);
            let profile = device_profile(cfg, &popularity, &user, &other);
            let sampler = DeviceSampler::new(cfg, &profile)?;
            let len = log_length(cfg, &mut rng);
            let pages = sampler.sample_sequence(&mut rng, len);
            let mut ts: i64 = rng.random_range(1_600_000_000..1_700_000_000);
            let events = pages
                .into_iter()
                .map(|p| {
                    ts += rng.random_range(1..600);
                    Event {
                        ts,
                        tokens: cfg.url_tokens(p),
                    }
                })
                .collect();
            let id = device_id(u, d);
            user_of.insert(id.clone(), user_id(u));
            logs.push(DeviceLog { device_id: id, events });
        }
    }
    let pairs = if cfg.n_users * cfg.devices_per_user >= 2 && cfg.devices_per_user >= 2 {
        sample_pairs(&logs, &user_of, cfg.neg_ratio, derive_seed(cfg.seed, "synth.pairs"))?
    } else {
        Vec::new()
    };
    Ok(SynthDataset { logs, pairs, user_of })
}

/// All same-user device pairs as positives plus `ceil(neg_ratio · positives)`
/// distinct, uniformly drawn cross-user negatives (fewer if not that many
/// exist). Pairs are unordered for de-duplication.
pub fn sample_pairs(
    logs: &[DeviceLog],
    user_of: &BTreeMap<String, String>,
    neg_ratio: f64,
    seed: u64,
) -> Result<Vec<DevicePair>> {
    if logs.len() < 2 {
        return Err(Error::config("pair sampling needs at least two devices"));
    }
    let ids: Vec<&str> = logs.iter().map(|l| l.device_id.as_str()).collect();
    let user = |d: &str| -> Result<&String> {
        user_of
            .get(d)
            .ok_or_else(|| Error::config(format!("device `{d}` has no user")))
    };
    let users: Vec<&String> = ids.iter().map(|d| user(d)).collect::<Result<_>>()?;
    let mut pairs = Vec::new();
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            if users[i] == users[j] {
                pairs.push(DevicePair::labeled(ids[i], ids[j], true));
            }
        }
    }
    let positives = pairs.len();
    if positives == 0 {
        return Err(Error::config("no positive pairs available"));
    }
    let wanted = (neg_ratio * positives as f64).ceil() as usize;
    let n = ids.len();
    let total_pairs = n * (n - 1) / 2;
    let available = total_pairs - positives;
    let wanted = if wanted > available {
        log::warn!("only {available} cross-user pairs exist; {wanted} requested");
        available
    } else {
        wanted
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if wanted * 2 > available {
        let mut all: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| users[i] != users[j])
            .collect();
        all.shuffle(&mut rng);
        for &(i, j) in &all[..wanted] {
            pairs.push(DevicePair::labeled(ids[i], ids[j], false));
        }
    } else {
        let mut seen = BTreeSet::new();
        while seen.len() < wanted {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if users[i] == users[j] || !seen.insert((i.min(j), i.max(j))) {
                continue;
            }
            pairs.push(DevicePair::labeled(ids[i], ids[j], false));
        }
    }
    Ok(pairs)
}

/// Splits users (not pairs) into train and held-out sets, then samples
/// pairs within each side.
pub fn holdout_split(
    ds: &SynthDataset,
    holdout: f64,
    neg_ratio: f64,
    seed: u64,
) -> Result<(Vec<DevicePair>, Vec<DevicePair>)> {
    if !(holdout > 0.0 && holdout < 1.0) {
        return Err(Error::config(format!("holdout fraction must lie in (0, 1), got {holdout}")));
    }
    let mut users: Vec<&String> = ds.user_of.values().collect::<BTreeSet<_>>().into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    users.shuffle(&mut rng);
    let n_test = ((holdout * users.len() as f64).round() as usize).clamp(1, users.len() - 1);
    let test: BTreeSet<&String> = users[..n_test].iter().copied().collect();
    let (test_logs, train_logs): (Vec<DeviceLog>, Vec<DeviceLog>) = ds
        .logs
        .iter()
        .cloned()
        .partition(|l| test.contains(&ds.user_of[&l.device_id]));
    let train = sample_pairs(&train_logs, &ds.user_of, neg_ratio, derive_seed(seed, "train"))?;
    let test = sample_pairs(&test_logs, &ds.user_of, neg_ratio, derive_seed(seed, "test"))?;
    Ok((train, test))
}

/// Jaccard similarity of the URL sets of two logs.
pub fn jaccard(a: &DeviceLog, b: &DeviceLog) -> f64 {
    let sa: BTreeSet<UrlKey> = a.events.iter().map(|e| UrlKey(e.tokens.clone())).collect();
    let sb: BTreeSet<UrlKey> = b.events.iter().map(|e| UrlKey(e.tokens.clone())).collect();
    let inter = sa.intersection(&sb).count();
    let union = sa.len() + sb.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

//! Architecture variants assembled from [`crate::layers`].
//!
//! * `early`: raw features of all modalities concatenated per utterance, then
//!   a softmax head (optionally one context GRU in between).
//! * `hfusion`: per-modality dense maps to a shared width, per-dimension
//!   bimodal fusion of every pair, per-dimension trimodal fusion of the three
//!   bimodal features, softmax head. No recurrence.
//! * `chfusion`: as `hfusion` but with a context GRU after every unimodal
//!   input, after every bimodal fusion and after the trimodal fusion.
//!
//! Subsets of the modalities stop early: a pair model classifies its
//! (contextual) bimodal feature, a single modality model its (contextual)
//! unimodal feature.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::convert::Infallible;
use core::fmt;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::gradcheck::ParamSet;
use crate::layers::{count, Activation, Dense, PairFusion, PaperGru, TripleFusion};
use crate::matrix::Matrix;
use crate::tape::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Modality {
    T,
    A,
    V,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::T, Modality::A, Modality::V];

    pub fn letter(self) -> char {
        match self {
            Modality::T => 'T',
            Modality::A => 'A',
            Modality::V => 'V',
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// The three bimodal combinations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Pair {
    VA,
    AT,
    VT,
}

impl Pair {
    pub const ALL: [Pair; 3] = [Pair::VA, Pair::AT, Pair::VT];

    /// The two member modalities, in fusion-weight order (`w1`, `w2`).
    pub fn members(self) -> (Modality, Modality) {
        match self {
            Pair::VA => (Modality::V, Modality::A),
            Pair::AT => (Modality::A, Modality::T),
            Pair::VT => (Modality::V, Modality::T),
        }
    }

    pub fn of(a: Modality, b: Modality) -> Option<Pair> {
        Pair::ALL.into_iter().find(|p| {
            let (x, y) = p.members();
            (x, y) == (a, b) || (y, x) == (a, b)
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Pair::VA => "VA",
            Pair::AT => "AT",
            Pair::VT => "VT",
        }
    }
}

/// Nonempty subset of `{T, A, V}`. Serialized as a string of letters, e.g. `"TAV"`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModalitySet([bool; 3]);

impl ModalitySet {
    pub const TAV: ModalitySet = ModalitySet([true; 3]);

    pub fn new(modalities: &[Modality]) -> Result<Self> {
        let mut set = [false; 3];
        for &m in modalities {
            let slot = &mut set[m as usize];
            if *slot {
                return Err(Error::config(format!("modality {m} listed twice")));
            }
            *slot = true;
        }
        if set == [false; 3] {
            return Err(Error::config("modality set is empty"));
        }
        Ok(ModalitySet(set))
    }

    pub fn contains(&self, m: Modality) -> bool {
        self.0[m as usize]
    }

    /// Members in canonical `T, A, V` order.
    pub fn iter(&self) -> impl Iterator<Item = Modality> + '_ {
        Modality::ALL.into_iter().filter(|&m| self.contains(m))
    }

    pub fn len(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The pair a two-modality set fuses, if any.
    pub fn pair(&self) -> Option<Pair> {
        let members: Vec<Modality> = self.iter().collect();
        match members.as_slice() {
            [a, b] => Pair::of(*a, *b),
            _ => None,
        }
    }

    /// Every nonempty subset, singletons first.
    pub fn all_subsets() -> Vec<ModalitySet> {
        let mut out: Vec<ModalitySet> = (1u8..8)
            .map(|bits| ModalitySet([bits & 1 != 0, bits & 2 != 0, bits & 4 != 0]))
            .collect();
        out.sort_by_key(|s| s.len());
        out
    }
}

impl fmt::Display for ModalitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in self.iter() {
            write!(f, "{m}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for ModalitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ModalitySet({self})")
    }
}

impl FromStr for ModalitySet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let modalities = s
            .chars()
            .map(|c| match c.to_ascii_uppercase() {
                'T' => Ok(Modality::T),
                'A' => Ok(Modality::A),
                'V' => Ok(Modality::V),
                other => Err(Error::config(format!("unknown modality `{other}` in `{s}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        ModalitySet::new(&modalities)
    }
}

impl Serialize for ModalitySet {
    fn serialize<S: Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModalitySet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Early,
    Hfusion,
    Chfusion,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Early => "early",
            Variant::Hfusion => "hfusion",
            Variant::Chfusion => "chfusion",
        })
    }
}

fn default_shared() -> usize {
    400
}
fn default_bimodal() -> usize {
    500
}
fn default_trimodal() -> usize {
    550
}
fn default_classes() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub modalities: ModalitySet,
    /// Raw feature width per modality.
    #[serde(default)]
    pub input_dims: BTreeMap<Modality, usize>,
    /// Output width of each unimodal context GRU. Missing entries fall back
    /// to `shared_dim`.
    #[serde(default)]
    pub context_dims: BTreeMap<Modality, usize>,
    #[serde(default = "default_shared")]
    pub shared_dim: usize,
    #[serde(default = "default_bimodal")]
    pub bimodal_dim: usize,
    #[serde(default = "default_trimodal")]
    pub trimodal_dim: usize,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    /// Utterances per (padded) video. Zero means "not yet known".
    #[serde(default)]
    pub max_utterances: usize,
    /// Early fusion only: one context GRU (output `shared_dim`) before the head.
    #[serde(default)]
    pub early_context: bool,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    /// A config with the default widths and the given raw input dims.
    pub fn new(variant: Variant, modalities: ModalitySet, input_dims: &[(Modality, usize)]) -> Self {
        ModelConfig {
            variant,
            modalities,
            input_dims: input_dims.iter().copied().collect(),
            context_dims: BTreeMap::new(),
            shared_dim: default_shared(),
            bimodal_dim: default_bimodal(),
            trimodal_dim: default_trimodal(),
            num_classes: default_classes(),
            max_utterances: 0,
            early_context: false,
            seed: 0,
        }
    }

    pub fn input_dim(&self, m: Modality) -> usize {
        self.input_dims.get(&m).copied().unwrap_or(0)
    }

    pub fn context_dim(&self, m: Modality) -> usize {
        self.context_dims.get(&m).copied().unwrap_or(self.shared_dim)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("shared_dim", self.shared_dim),
            ("bimodal_dim", self.bimodal_dim),
            ("trimodal_dim", self.trimodal_dim),
            ("num_classes", self.num_classes),
            ("max_utterances", self.max_utterances),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        for m in self.modalities.iter() {
            if self.input_dim(m) == 0 {
                return Err(Error::config(format!("input dim for modality {m} missing or zero")));
            }
            if self.context_dim(m) == 0 {
                return Err(Error::config(format!("context dim for modality {m} is zero")));
            }
        }
        Ok(())
    }

    /// Width of the feature the softmax head consumes.
    pub fn head_input_dim(&self) -> usize {
        let n = self.modalities.len();
        match self.variant {
            Variant::Early if self.early_context => self.shared_dim,
            Variant::Early => self.early_input_dim(),
            Variant::Hfusion if n == 1 => self.input_dim(self.single()),
            Variant::Hfusion => self.shared_dim,
            Variant::Chfusion => match n {
                1 => self.context_dim(self.single()),
                2 => self.bimodal_dim,
                _ => self.trimodal_dim,
            },
        }
    }

    /// Width of the concatenated raw features, `Σ d_m`.
    pub fn early_input_dim(&self) -> usize {
        self.modalities.iter().map(|m| self.input_dim(m)).sum()
    }

    fn single(&self) -> Modality {
        self.modalities.iter().next().expect("modality set is nonempty")
    }

    /// True for the variant/subset combinations that reduce to a plain
    /// dense+softmax on raw features.
    pub fn is_plain_baseline(&self) -> bool {
        match self.variant {
            Variant::Early => !self.early_context,
            Variant::Hfusion => self.modalities.len() == 1,
            Variant::Chfusion => false,
        }
    }
}

/// The full trainable set of a model, or anything shaped like it (gradients,
/// optimizer moments, tape handles).
#[derive(Clone, Debug, PartialEq)]
pub struct Network<P = Matrix> {
    pub unimodal_ctx: Vec<(Modality, PaperGru<P>)>,
    pub map_to_space: Vec<(Modality, Dense<P>)>,
    pub pair_fusion: Vec<(Pair, PairFusion<P>)>,
    pub pair_ctx: Vec<(Pair, PaperGru<P>)>,
    pub triple_fusion: Option<TripleFusion<P>>,
    pub triple_ctx: Option<PaperGru<P>>,
    pub early_ctx: Option<PaperGru<P>>,
    pub head: Dense<P>,
}

pub type ModelParams = Network<Matrix>;
/// Gradients carry exactly the structure of the parameters they belong to.
pub type GradientStore = Network<Matrix>;

impl<P> Network<P> {
    pub fn try_map<Q, E>(
        &self,
        mut f: impl FnMut(&str, &P) -> core::result::Result<Q, E>,
    ) -> core::result::Result<Network<Q>, E> {
        let mut name = String::new();
        let mut named = |prefix: &str, leaf: &str, p: &P| {
            name.clear();
            name.push_str(prefix);
            name.push('.');
            name.push_str(leaf);
            f(&name, p)
        };
        let mut unimodal_ctx = Vec::new();
        for (m, g) in &self.unimodal_ctx {
            let prefix = format!("ctx.{m}");
            unimodal_ctx.push((*m, g.try_map(|l, p| named(&prefix, l, p))?));
        }
        let mut map_to_space = Vec::new();
        for (m, d) in &self.map_to_space {
            let prefix = format!("map.{m}");
            map_to_space.push((*m, d.try_map(|l, p| named(&prefix, l, p))?));
        }
        let mut pair_fusion = Vec::new();
        for (pair, fu) in &self.pair_fusion {
            let prefix = format!("fuse.{}", pair.name());
            pair_fusion.push((*pair, fu.try_map(|l, p| named(&prefix, l, p))?));
        }
        let mut pair_ctx = Vec::new();
        for (pair, g) in &self.pair_ctx {
            let prefix = format!("ctx.{}", pair.name());
            pair_ctx.push((*pair, g.try_map(|l, p| named(&prefix, l, p))?));
        }
        let triple_fusion = match &self.triple_fusion {
            Some(t) => Some(t.try_map(|l, p| named("fuse.AVT", l, p))?),
            None => None,
        };
        let triple_ctx = match &self.triple_ctx {
            Some(g) => Some(g.try_map(|l, p| named("ctx.AVT", l, p))?),
            None => None,
        };
        let early_ctx = match &self.early_ctx {
            Some(g) => Some(g.try_map(|l, p| named("ctx.early", l, p))?),
            None => None,
        };
        let head = self.head.try_map(|l, p| named("head", l, p))?;
        Ok(Network {
            unimodal_ctx,
            map_to_space,
            pair_fusion,
            pair_ctx,
            triple_fusion,
            triple_ctx,
            early_ctx,
            head,
        })
    }

    pub fn map<Q>(&self, mut f: impl FnMut(&str, &P) -> Q) -> Network<Q> {
        match self.try_map(|n, p| Ok::<Q, Infallible>(f(n, p))) {
            Ok(net) => net,
            Err(never) => match never {},
        }
    }

    /// Visits every tensor with its dotted name, e.g. `ctx.T.U_z`.
    pub fn visit(&self, mut f: impl FnMut(&str, &P)) {
        let _ = self.map(|n, p| f(n, p));
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(|n, _| out.push(n.to_string()));
        out
    }

    /// Mutable references in the same order as [`Network::visit`].
    pub fn fields_mut(&mut self) -> Vec<&mut P> {
        let mut out = Vec::new();
        for (_, g) in &mut self.unimodal_ctx {
            out.extend(g.fields_mut());
        }
        for (_, d) in &mut self.map_to_space {
            out.extend(d.fields_mut());
        }
        for (_, f) in &mut self.pair_fusion {
            out.extend(f.fields_mut());
        }
        for (_, g) in &mut self.pair_ctx {
            out.extend(g.fields_mut());
        }
        if let Some(t) = &mut self.triple_fusion {
            out.extend(t.fields_mut());
        }
        if let Some(g) = &mut self.triple_ctx {
            out.extend(g.fields_mut());
        }
        if let Some(g) = &mut self.early_ctx {
            out.extend(g.fields_mut());
        }
        out.extend(self.head.fields_mut());
        out
    }
}

impl ParamSet for Network<Matrix> {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        // names and references are collected in the same traversal order
        let names = self.names();
        let mut refs: Vec<&Matrix> = Vec::new();
        for (_, g) in &self.unimodal_ctx {
            g.for_each(|_, m| refs.push(m));
        }
        for (_, d) in &self.map_to_space {
            d.for_each(|_, m| refs.push(m));
        }
        for (_, f) in &self.pair_fusion {
            f.for_each(|_, m| refs.push(m));
        }
        for (_, g) in &self.pair_ctx {
            g.for_each(|_, m| refs.push(m));
        }
        if let Some(t) = &self.triple_fusion {
            t.for_each(|_, m| refs.push(m));
        }
        if let Some(g) = &self.triple_ctx {
            g.for_each(|_, m| refs.push(m));
        }
        if let Some(g) = &self.early_ctx {
            g.for_each(|_, m| refs.push(m));
        }
        self.head.for_each(|_, m| refs.push(m));
        out.extend(names.into_iter().zip(refs));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.fields_mut()
    }
}

impl Network<Matrix> {
    pub fn zeros_like(&self) -> Self {
        self.map(|_, m| Matrix::zeros(m.rows(), m.cols()))
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors().into_iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    /// Binds every tensor as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Network<Var> {
        self.map(|_, m| tape.leaf(m.clone()))
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        let others: Vec<&Matrix> = other.tensors().into_iter().map(|(_, m)| m).collect();
        for (a, b) in self.fields_mut().into_iter().zip(others) {
            a.add_assign(b);
        }
    }
}

enum Init<'a> {
    Zeros,
    Glorot(&'a mut ChaCha8Rng),
}

impl Init<'_> {
    fn gru(&mut self, input: usize, hidden: usize) -> PaperGru {
        match self {
            Init::Zeros => PaperGru::zeros(input, hidden),
            Init::Glorot(rng) => PaperGru::init(input, hidden, *rng),
        }
    }

    fn dense(&mut self, input: usize, output: usize, act: Activation) -> Dense {
        match self {
            Init::Zeros => Dense::zeros(input, output, act),
            Init::Glorot(rng) => Dense::init(input, output, act, *rng),
        }
    }

    fn pair(&mut self, width: usize) -> PairFusion {
        match self {
            Init::Zeros => PairFusion::zeros(width),
            Init::Glorot(rng) => PairFusion::init(width, *rng),
        }
    }

    fn triple(&mut self, width: usize) -> TripleFusion {
        match self {
            Init::Zeros => TripleFusion::zeros(width),
            Init::Glorot(rng) => TripleFusion::init(width, *rng),
        }
    }
}

fn allocate(cfg: &ModelConfig, mut init: Init<'_>) -> Result<ModelParams> {
    cfg.validate()?;
    let n = cfg.modalities.len();
    let mut net = Network {
        unimodal_ctx: Vec::new(),
        map_to_space: Vec::new(),
        pair_fusion: Vec::new(),
        pair_ctx: Vec::new(),
        triple_fusion: None,
        triple_ctx: None,
        early_ctx: None,
        head: Dense::zeros(0, 0, Activation::None),
    };
    match cfg.variant {
        Variant::Early => {
            if cfg.early_context {
                net.early_ctx = Some(init.gru(cfg.early_input_dim(), cfg.shared_dim));
            }
        }
        Variant::Hfusion | Variant::Chfusion => {
            let contextual = cfg.variant == Variant::Chfusion;
            if contextual {
                for m in cfg.modalities.iter() {
                    net.unimodal_ctx.push((m, init.gru(cfg.input_dim(m), cfg.context_dim(m))));
                }
            }
            if n >= 2 {
                for m in cfg.modalities.iter() {
                    let width = if contextual { cfg.context_dim(m) } else { cfg.input_dim(m) };
                    net.map_to_space
                        .push((m, init.dense(width, cfg.shared_dim, Activation::Tanh)));
                }
                for pair in pairs_of(&cfg.modalities) {
                    net.pair_fusion.push((pair, init.pair(cfg.shared_dim)));
                    if contextual {
                        net.pair_ctx.push((pair, init.gru(cfg.shared_dim, cfg.bimodal_dim)));
                    }
                }
            }
            if n == 3 {
                if contextual {
                    net.triple_fusion = Some(init.triple(cfg.bimodal_dim));
                    net.triple_ctx = Some(init.gru(cfg.bimodal_dim, cfg.trimodal_dim));
                } else {
                    net.triple_fusion = Some(init.triple(cfg.shared_dim));
                }
            }
        }
    }
    net.head = init.dense(cfg.head_input_dim(), cfg.num_classes, Activation::None);
    Ok(net)
}

/// The pairs a modality set fuses: all three for `TAV`, one for a two-set.
pub fn pairs_of(set: &ModalitySet) -> Vec<Pair> {
    match set.len() {
        3 => Pair::ALL.to_vec(),
        2 => set.pair().into_iter().collect(),
        _ => Vec::new(),
    }
}

/// Allocates and initializes the parameters `cfg` calls for: Glorot-uniform
/// matrices, zero biases. Deterministic in `cfg.seed`.
pub fn build_model(cfg: &ModelConfig) -> Result<ModelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    allocate(cfg, Init::Glorot(&mut rng))
}

/// Same structure as [`build_model`], all entries zero.
pub fn zero_model(cfg: &ModelConfig) -> Result<ModelParams> {
    allocate(cfg, Init::Zeros)
}

/// Checks that `params` has exactly the tensor names and shapes `cfg` implies.
pub fn validate_params(params: &ModelParams, cfg: &ModelConfig) -> Result<()> {
    let template = zero_model(cfg)?;
    let want = template.tensors();
    let got = params.tensors();
    if want.len() != got.len() {
        return Err(Error::config(format!(
            "expected {} parameter tensors, found {}",
            want.len(),
            got.len()
        )));
    }
    for ((wn, wm), (gn, gm)) in want.iter().zip(&got) {
        if wn != gn {
            return Err(Error::config(format!("expected tensor `{wn}`, found `{gn}`")));
        }
        if wm.shape() != gm.shape() {
            return Err(Error::dim("parameter shape", gm.shape(), wm.shape()));
        }
    }
    Ok(())
}

/// Closed-form scalar count of the parameters [`build_model`] allocates.
pub fn param_count(cfg: &ModelConfig) -> Result<usize> {
    cfg.validate()?;
    let n = cfg.modalities.len();
    let c = cfg.num_classes;
    let head = count::dense(cfg.head_input_dim(), c);
    let total = match cfg.variant {
        Variant::Early if cfg.early_context => count::paper_gru(cfg.early_input_dim(), cfg.shared_dim) + head,
        Variant::Early => head,
        Variant::Hfusion => {
            let mut total = head;
            if n >= 2 {
                total += cfg
                    .modalities
                    .iter()
                    .map(|m| count::dense(cfg.input_dim(m), cfg.shared_dim))
                    .sum::<usize>();
                total += pairs_of(&cfg.modalities).len() * count::pair_fusion(cfg.shared_dim);
            }
            if n == 3 {
                total += count::triple_fusion(cfg.shared_dim);
            }
            total
        }
        Variant::Chfusion => {
            let mut total = head;
            total += cfg
                .modalities
                .iter()
                .map(|m| count::paper_gru(cfg.input_dim(m), cfg.context_dim(m)))
                .sum::<usize>();
            if n >= 2 {
                total += cfg
                    .modalities
                    .iter()
                    .map(|m| count::dense(cfg.context_dim(m), cfg.shared_dim))
                    .sum::<usize>();
                total += pairs_of(&cfg.modalities).len()
                    * (count::pair_fusion(cfg.shared_dim) + count::paper_gru(cfg.shared_dim, cfg.bimodal_dim));
            }
            if n == 3 {
                total += count::triple_fusion(cfg.bimodal_dim) + count::paper_gru(cfg.bimodal_dim, cfg.trimodal_dim);
            }
            total
        }
    };
    Ok(total)
}

/// Per-modality `N × d_m` utterance features of one video.
pub type VideoFeatures = BTreeMap<Modality, Matrix>;

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    /// `N × C`, rows sum to one.
    pub probs: Matrix,
    /// The feature the head consumed, `N × head_input_dim`.
    pub fused: Matrix,
}

/// Validates `features` against `cfg` and returns the utterance count `N`.
pub fn check_features(cfg: &ModelConfig, features: &VideoFeatures) -> Result<usize> {
    let mut rows = None;
    for m in cfg.modalities.iter() {
        let f = features
            .get(&m)
            .ok_or_else(|| Error::config(format!("missing features for modality {m}")))?;
        if f.cols() != cfg.input_dim(m) {
            return Err(Error::dim("input features", f.shape(), (f.rows(), cfg.input_dim(m))));
        }
        match rows {
            None => rows = Some(f.rows()),
            Some(r) if r != f.rows() => {
                return Err(Error::dim("input features", f.shape(), (r, f.cols())));
            }
            _ => {}
        }
    }
    let n = rows.unwrap_or(0);
    if n == 0 {
        return Err(Error::contract("video has no utterances"));
    }
    if n > cfg.max_utterances {
        return Err(Error::contract(format!(
            "video has {n} utterances, more than max_utterances = {}",
            cfg.max_utterances
        )));
    }
    Ok(n)
}

fn layer<'a, K: PartialEq + fmt::Debug, L>(layers: &'a [(K, L)], key: K, what: &str) -> Result<&'a L> {
    layers
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, l)| l)
        .ok_or_else(|| Error::config(format!("model has no {what} layer for {key:?}")))
}

/// Records the forward pass on `tape`. Returns `(probs, fused)` handles.
pub fn forward_on_tape(
    tape: &mut Tape,
    net: &Network<Var>,
    cfg: &ModelConfig,
    inputs: &BTreeMap<Modality, Var>,
) -> Result<(Var, Var)> {
    let input = |m: Modality| {
        inputs
            .get(&m)
            .copied()
            .ok_or_else(|| Error::config(format!("missing input for modality {m}")))
    };
    let fused = match cfg.variant {
        Variant::Early => {
            let parts = cfg.modalities.iter().map(input).collect::<Result<Vec<_>>>()?;
            let joined = tape.concat_cols(&parts)?;
            match &net.early_ctx {
                Some(gru) => gru.apply(tape, joined, None)?,
                None => joined,
            }
        }
        Variant::Hfusion | Variant::Chfusion => {
            let contextual = cfg.variant == Variant::Chfusion;
            let mut unimodal = BTreeMap::new();
            for m in cfg.modalities.iter() {
                let f = input(m)?;
                let f = if contextual {
                    layer(&net.unimodal_ctx, m, "context GRU")?.apply(tape, f, None)?
                } else {
                    f
                };
                unimodal.insert(m, f);
            }
            if cfg.modalities.len() == 1 {
                unimodal.into_values().next().expect("one modality")
            } else {
                let mut equalized = BTreeMap::new();
                for (m, f) in unimodal {
                    equalized.insert(m, layer(&net.map_to_space, m, "dense map")?.apply(tape, f)?);
                }
                let mut bimodal = Vec::new();
                for pair in pairs_of(&cfg.modalities) {
                    let (a, b) = pair.members();
                    let fusion = layer(&net.pair_fusion, pair, "pair fusion")?;
                    let fused = fusion.apply(tape, equalized[&a], equalized[&b])?;
                    let fused = if contextual {
                        layer(&net.pair_ctx, pair, "pair context GRU")?.apply(tape, fused, None)?
                    } else {
                        fused
                    };
                    bimodal.push(fused);
                }
                match bimodal.as_slice() {
                    [single] => *single,
                    [va, at, vt] => {
                        let triple = net
                            .triple_fusion
                            .as_ref()
                            .ok_or_else(|| Error::config("model has no trimodal fusion layer"))?;
                        let z = triple.apply(tape, *va, *at, *vt)?;
                        match (&net.triple_ctx, contextual) {
                            (Some(gru), true) => gru.apply(tape, z, None)?,
                            (None, true) => return Err(Error::config("model has no trimodal context GRU")),
                            (_, false) => z,
                        }
                    }
                    _ => unreachable!("pairs_of yields one or three pairs"),
                }
            }
        }
    };
    let logits = net.head.apply(tape, fused)?;
    let probs = tape.softmax_rows(logits);
    Ok((probs, fused))
}

/// Binds `params` and `features` on a fresh tape and runs the forward pass.
pub fn forward_tape(
    params: &ModelParams,
    cfg: &ModelConfig,
    features: &VideoFeatures,
    tape: &mut Tape,
) -> Result<(Network<Var>, Var, Var)> {
    check_features(cfg, features)?;
    let net = params.bind(tape);
    let inputs: BTreeMap<Modality, Var> = cfg
        .modalities
        .iter()
        .map(|m| (m, tape.leaf(features[&m].clone())))
        .collect();
    let (probs, fused) = forward_on_tape(tape, &net, cfg, &inputs)?;
    Ok((net, probs, fused))
}

/// Class probabilities for every utterance of one video. The mask does not
/// alter the computation: padding is a suffix and every recurrence is causal,
/// so real utterances never see padded ones.
pub fn forward(params: &ModelParams, cfg: &ModelConfig, features: &VideoFeatures, mask: &[bool]) -> Result<ForwardOutput> {
    let n = check_features(cfg, features)?;
    if mask.len() != n {
        return Err(Error::dim("mask", (mask.len(), 1), (n, 1)));
    }
    let mut tape = Tape::new();
    let (_, probs, fused) = forward_tape(params, cfg, features, &mut tape)?;
    Ok(ForwardOutput {
        probs: tape.value(probs).clone(),
        fused: tape.value(fused).clone(),
    })
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn predict(out: &ForwardOutput) -> Vec<usize> {
    argmax_rows(&out.probs)
}

pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|r| {
            let row = m.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(variant: Variant, set: &str) -> ModelConfig {
        let mut cfg = ModelConfig::new(
            variant,
            set.parse().unwrap(),
            &[(Modality::T, 3), (Modality::A, 4), (Modality::V, 5)],
        );
        cfg.context_dims = [(Modality::T, 4), (Modality::A, 4), (Modality::V, 4)].into_iter().collect();
        cfg.shared_dim = 6;
        cfg.bimodal_dim = 7;
        cfg.trimodal_dim = 8;
        cfg.max_utterances = 5;
        cfg
    }

    #[test]
    fn modality_set_parsing() {
        let s: ModalitySet = "vat".parse().unwrap();
        assert_eq!(s, ModalitySet::TAV);
        assert_eq!(s.to_string(), "TAV");
        assert!("".parse::<ModalitySet>().is_err());
        assert!("TT".parse::<ModalitySet>().is_err());
        assert!("TX".parse::<ModalitySet>().is_err());
        assert_eq!("AT".parse::<ModalitySet>().unwrap().pair(), Some(Pair::AT));
        assert_eq!("TV".parse::<ModalitySet>().unwrap().pair(), Some(Pair::VT));
        assert_eq!("AV".parse::<ModalitySet>().unwrap().pair(), Some(Pair::VA));
        assert_eq!(ModalitySet::all_subsets().len(), 7);
    }

    #[test]
    fn degenerate_unimodal_chfusion() {
        let mut cfg = ModelConfig::new(Variant::Chfusion, "T".parse().unwrap(), &[(Modality::T, 5)]);
        cfg.context_dims.insert(Modality::T, 4);
        cfg.max_utterances = 3;
        let p = build_model(&cfg).unwrap();
        assert_eq!(p.unimodal_ctx.len(), 1);
        assert!(p.map_to_space.is_empty() && p.pair_fusion.is_empty());
        assert_eq!(p.head.w.shape(), (4, 2));
    }

    #[test]
    fn hfusion_has_no_grus() {
        let p = build_model(&tiny(Variant::Hfusion, "TAV")).unwrap();
        assert!(p.unimodal_ctx.is_empty() && p.pair_ctx.is_empty());
        assert!(p.triple_ctx.is_none() && p.early_ctx.is_none());
        assert!(!p.names().iter().any(|n| n.starts_with("ctx.")));
        assert_eq!(p.triple_fusion.as_ref().unwrap().w1.cols(), 6);
        assert_eq!(p.head.w.rows(), 6);
    }

    #[test]
    fn chfusion_widths() {
        let cfg = tiny(Variant::Chfusion, "TAV");
        let p = build_model(&cfg).unwrap();
        assert_eq!(p.get("ctx.A.U_z").unwrap().shape(), (4, 4));
        assert_eq!(p.get("map.V.W").unwrap().shape(), (4, 6));
        assert_eq!(p.get("fuse.VA.w1").unwrap().shape(), (1, 6));
        assert_eq!(p.get("ctx.VT.U_h").unwrap().shape(), (6, 7));
        assert_eq!(p.get("fuse.AVT.w3").unwrap().shape(), (1, 7));
        assert_eq!(p.get("ctx.AVT.U_x").unwrap().shape(), (8, 8));
        assert_eq!(p.get("head.W").unwrap().shape(), (8, 2));
    }

    #[test]
    fn build_is_deterministic() {
        let cfg = tiny(Variant::Chfusion, "TAV");
        assert_eq!(build_model(&cfg).unwrap(), build_model(&cfg).unwrap());
        let mut other = cfg.clone();
        other.seed = 1;
        assert_ne!(build_model(&cfg).unwrap(), build_model(&other).unwrap());
    }

    #[test]
    fn empty_or_incomplete_config_rejected() {
        let mut cfg = tiny(Variant::Hfusion, "TA");
        cfg.input_dims.remove(&Modality::A);
        assert!(matches!(build_model(&cfg), Err(Error::Config(_))));
        assert!(ModalitySet::new(&[]).is_err());
    }

    #[test]
    fn zero_params_give_uniform_probs() {
        for variant in [Variant::Early, Variant::Hfusion, Variant::Chfusion] {
            let cfg = tiny(variant, "TAV");
            let params = zero_model(&cfg).unwrap();
            let feats: VideoFeatures = Modality::ALL
                .into_iter()
                .map(|m| (m, Matrix::filled(3, cfg.input_dim(m), 0.7)))
                .collect();
            let out = forward(&params, &cfg, &feats, &[true; 3]).unwrap();
            for v in out.probs.data() {
                assert!((v - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let cfg = tiny(Variant::Chfusion, "TA");
        let params = build_model(&cfg).unwrap();
        let mut feats: VideoFeatures = [(Modality::T, Matrix::zeros(2, 3)), (Modality::A, Matrix::zeros(2, 4))]
            .into_iter()
            .collect();
        assert!(forward(&params, &cfg, &feats, &[true, true]).is_ok());
        assert!(forward(&params, &cfg, &feats, &[true]).is_err());
        feats.insert(Modality::A, Matrix::zeros(2, 5));
        assert!(matches!(
            forward(&params, &cfg, &feats, &[true, true]),
            Err(Error::Dimension { .. })
        ));
        feats.insert(Modality::A, Matrix::zeros(6, 4));
        feats.insert(Modality::T, Matrix::zeros(6, 3));
        assert!(forward(&params, &cfg, &feats, &[true; 6]).is_err());
    }

    #[test]
    fn predict_ties_and_argmax() {
        let out = ForwardOutput {
            probs: Matrix::from_rows(&[[0.5, 0.5], [0.2, 0.8]]).unwrap(),
            fused: Matrix::zeros(2, 1),
        };
        assert_eq!(predict(&out), alloc::vec![0, 1]);
    }

    #[test]
    fn param_count_matches_allocation_for_tiny_trimodal() {
        let cfg = tiny(Variant::Chfusion, "TAV");
        let allocated: usize = build_model(&cfg).unwrap().scalar_count();
        assert_eq!(param_count(&cfg).unwrap(), allocated);
    }

    #[test]
    fn early_width_is_sum_of_inputs() {
        let mut cfg = ModelConfig::new(
            Variant::Early,
            ModalitySet::TAV,
            &[(Modality::T, 500), (Modality::A, 6392), (Modality::V, 300)],
        );
        cfg.max_utterances = 1;
        assert_eq!(cfg.head_input_dim(), 7192);
    }
}

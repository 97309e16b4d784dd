//! Pose and text data model: channel layout, sequences, vocabulary, corpus,
//! plus the padding / normalisation / counter helpers shared by both models.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Reserved padding token id.
pub const PAD: usize = 0;

/// Which pose channels participate in training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Channels {
    /// Hands, arms and body joints only.
    ManualOnly,
    /// Facial landmarks only.
    NonmanualOnly,
    #[default]
    Both,
}

/// Joint counts of a frame: manual joints are 3D, face landmarks are 2D.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelLayout {
    pub manual_joints: usize,
    pub face_landmarks: usize,
}

impl ChannelLayout {
    pub fn new(manual_joints: usize, face_landmarks: usize) -> Result<Self> {
        if manual_joints + face_landmarks == 0 {
            return Err(Error::contract("layout needs at least one joint or landmark"));
        }
        Ok(ChannelLayout {
            manual_joints,
            face_landmarks,
        })
    }

    pub fn manual_width(&self) -> usize {
        3 * self.manual_joints
    }

    pub fn face_width(&self) -> usize {
        2 * self.face_landmarks
    }

    /// Frame width `3·J_m + 2·J_f`.
    pub fn pose_dim(&self) -> usize {
        self.manual_width() + self.face_width()
    }

    /// Layout after dropping the channels `channels` excludes.
    pub fn select(&self, channels: Channels) -> Result<ChannelLayout> {
        let l = match channels {
            Channels::Both => *self,
            Channels::ManualOnly => ChannelLayout {
                manual_joints: self.manual_joints,
                face_landmarks: 0,
            },
            Channels::NonmanualOnly => ChannelLayout {
                manual_joints: 0,
                face_landmarks: self.face_landmarks,
            },
        };
        ChannelLayout::new(l.manual_joints, l.face_landmarks)
    }

    /// Column range of the frame vector kept by `channels`.
    pub fn columns(&self, channels: Channels) -> core::ops::Range<usize> {
        match channels {
            Channels::Both => 0..self.pose_dim(),
            Channels::ManualOnly => 0..self.manual_width(),
            Channels::NonmanualOnly => self.manual_width()..self.pose_dim(),
        }
    }
}

/// One time step: `[manual block | face block]` plus a progress counter in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFrame {
    pub values: Vec<f64>,
    pub counter: f64,
}

/// Ordered frames of one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSequence {
    layout: ChannelLayout,
    frames: Vec<PoseFrame>,
}

impl PoseSequence {
    pub fn new(layout: ChannelLayout, frames: Vec<PoseFrame>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::contract("pose sequence needs at least one frame"));
        }
        let d = layout.pose_dim();
        let mut prev = 0.0;
        for (i, f) in frames.iter().enumerate() {
            if f.values.len() != d {
                return Err(Error::contract(format!(
                    "frame {i} has width {} but layout needs {d}",
                    f.values.len()
                )));
            }
            if !(0.0..=1.0).contains(&f.counter) || f.counter < prev {
                return Err(Error::contract(format!(
                    "frame {i} counter {} is outside [0,1] or decreasing",
                    f.counter
                )));
            }
            prev = f.counter;
        }
        Ok(PoseSequence { layout, frames })
    }

    /// Builds a sequence from pose rows, assigning the linear counter ramp.
    pub fn from_rows(layout: ChannelLayout, rows: Vec<Vec<f64>>) -> Result<Self> {
        let counters = counter_targets(rows.len())?;
        let frames = rows
            .into_iter()
            .zip(counters)
            .map(|(values, counter)| PoseFrame { values, counter })
            .collect();
        PoseSequence::new(layout, frames)
    }

    pub fn layout(&self) -> ChannelLayout {
        self.layout
    }

    pub fn frames(&self) -> &[PoseFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn counters(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.counter).collect()
    }

    /// `U × D_y` matrix of pose values.
    pub fn to_matrix(&self) -> Tensor {
        let d = self.layout.pose_dim();
        let data = self.frames.iter().flat_map(|f| f.values.iter().copied()).collect();
        Tensor::matrix(self.frames.len(), d, data).expect("validated on construction")
    }

    /// Keeps only the columns selected by `channels`.
    pub fn select_channels(&self, channels: Channels) -> Result<PoseSequence> {
        let layout = self.layout.select(channels)?;
        let cols = self.layout.columns(channels);
        let frames = self
            .frames
            .iter()
            .map(|f| PoseFrame {
                values: f.values[cols.clone()].to_vec(),
                counter: f.counter,
            })
            .collect();
        Ok(PoseSequence { layout, frames })
    }
}

/// Integer-encoded source sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence(pub Vec<usize>);

impl TokenSequence {
    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of non-padding tokens.
    pub fn content_len(&self) -> usize {
        self.0.iter().filter(|&&t| t != PAD).count()
    }
}

impl From<Vec<usize>> for TokenSequence {
    fn from(v: Vec<usize>) -> Self {
        TokenSequence(v)
    }
}

/// Bidirectional token/id map; id 0 is `<pad>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
}

pub const PAD_WORD: &str = "<pad>";

impl Vocabulary {
    /// Builds a vocabulary from corpus words (ids start at 1).
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![PAD_WORD.to_string()];
        for w in words {
            let w = w.into();
            if w == PAD_WORD || w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::contract(format!("invalid vocabulary word {w:?}")));
            }
            if all.contains(&w) {
                return Err(Error::contract(format!("duplicate vocabulary word {w:?}")));
            }
            all.push(w);
        }
        Ok(Vocabulary { words: all })
    }

    /// Size including the padding entry.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 1
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        if word == PAD_WORD {
            return None;
        }
        self.words.iter().position(|w| w == word)
    }

    /// All entries in id order, starting with `<pad>`.
    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn encode(&self, words: &[&str]) -> Result<TokenSequence> {
        words
            .iter()
            .map(|w| {
                self.id(w)
                    .ok_or_else(|| Error::contract(format!("unknown token `{w}`")))
            })
            .collect::<Result<Vec<_>>>()
            .map(TokenSequence)
    }
}

/// A paired source sentence and target pose sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusExample {
    pub id: String,
    pub source: TokenSequence,
    pub target: PoseSequence,
}

/// Longest target and source lengths in a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusLimits {
    pub u_max: usize,
    pub t_max: usize,
}

impl CorpusLimits {
    pub fn admits(&self, e: &CorpusExample) -> bool {
        e.target.len() <= self.u_max && e.source.len() <= self.t_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub layout: ChannelLayout,
    pub examples: Vec<CorpusExample>,
}

impl Corpus {
    pub fn new(layout: ChannelLayout, examples: Vec<CorpusExample>) -> Result<Self> {
        for e in &examples {
            if e.source.is_empty() {
                return Err(Error::contract(format!("example {} has no source tokens", e.id)));
            }
            if e.target.layout() != layout {
                return Err(Error::contract(format!(
                    "example {} layout differs from the corpus layout",
                    e.id
                )));
            }
        }
        Ok(Corpus { layout, examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn limits(&self) -> Result<CorpusLimits> {
        if self.examples.is_empty() {
            return Err(Error::contract("empty corpus has no limits"));
        }
        Ok(CorpusLimits {
            u_max: self.examples.iter().map(|e| e.target.len()).max().unwrap_or(0),
            t_max: self.examples.iter().map(|e| e.source.len()).max().unwrap_or(0),
        })
    }

    pub fn select_channels(&self, channels: Channels) -> Result<Corpus> {
        let examples = self
            .examples
            .iter()
            .map(|e| {
                Ok(CorpusExample {
                    id: e.id.clone(),
                    source: e.source.clone(),
                    target: e.target.select_channels(channels)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Corpus::new(self.layout.select(channels)?, examples)
    }

    /// Seeded 80/10/10 train/dev/test split.
    pub fn split(&self, seed: u64) -> Splits {
        let mut idx: Vec<usize> = (0..self.examples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5151_7e57);
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = n * 8 / 10;
        let n_dev = n / 10;
        let take = |r: &[usize]| Corpus {
            layout: self.layout,
            examples: r.iter().map(|&i| self.examples[i].clone()).collect(),
        };
        Splits {
            train: take(&idx[..n_train]),
            dev: take(&idx[n_train..n_train + n_dev]),
            test: take(&idx[n_train + n_dev..]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
}

impl Splits {
    pub fn get(&self, name: &str) -> Option<&Corpus> {
        match name {
            "train" => Some(&self.train),
            "dev" => Some(&self.dev),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Linear progress ramp `u / U` for `u = 1..=U`.
pub fn counter_targets(len: usize) -> Result<Vec<f64>> {
    if len == 0 {
        return Err(Error::contract("counter ramp needs at least one frame"));
    }
    Ok((1..=len).map(|u| u as f64 / len as f64).collect())
}

/// Result of [`normalize_face`]; `degenerate` marks a zero-extent face.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedFace {
    pub landmarks: Vec<[f64; 2]>,
    pub degenerate: bool,
}

/// Scales landmarks so their bounding-box diagonal is 1, then translates the
/// nose landmark to the origin.
pub fn normalize_face(landmarks: &[[f64; 2]], nose_index: usize) -> Result<NormalizedFace> {
    if nose_index >= landmarks.len() {
        return Err(Error::contract(format!(
            "nose index {nose_index} out of range for {} landmarks",
            landmarks.len()
        )));
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in landmarks {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let diag = libm::hypot(hi[0] - lo[0], hi[1] - lo[1]);
    if diag == 0.0 || !diag.is_finite() {
        return Ok(NormalizedFace {
            landmarks: vec![[0.0, 0.0]; landmarks.len()],
            degenerate: true,
        });
    }
    let nose = landmarks[nose_index];
    let out = landmarks
        .iter()
        .map(|p| [(p[0] - nose[0]) / diag, (p[1] - nose[1]) / diag])
        .collect();
    Ok(NormalizedFace {
        landmarks: out,
        degenerate: false,
    })
}

/// Appends zero rows to `x` until it has `rows` rows.
pub fn pad_rows(g: &mut Graph, x: Var, rows: usize) -> Result<Var> {
    let t = g.value(x);
    let (u, c) = (t.rows(), t.cols());
    if u > rows {
        return Err(Error::contract(format!("{u} rows exceed the padded length {rows}")));
    }
    if u == rows {
        return Ok(x);
    }
    let z = g.constant(Tensor::zeros(&[rows - u, c]));
    g.concat_rows(&[x, z])
}

/// `U_max × D_y` matrix: frame values, then zero rows. Counters are dropped.
pub fn pad_target(seq: &PoseSequence, u_max: usize) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(seq.to_matrix());
    let p = pad_rows(&mut g, x, u_max)?;
    Ok(g.value(p).clone())
}

/// Source embedding `W_x[token] + b_x` per token, zero rows up to `t_max`.
pub fn embed_and_pad_source_var(
    g: &mut Graph,
    tokens: &TokenSequence,
    w_x: Var,
    b_x: Var,
    t_max: usize,
) -> Result<Var> {
    if tokens.is_empty() {
        return Err(Error::contract("empty source sequence"));
    }
    if tokens.len() > t_max {
        return Err(Error::contract(format!(
            "source length {} exceeds T_max {t_max}",
            tokens.len()
        )));
    }
    let e = g.gather_rows(w_x, tokens.ids())?;
    let e = g.add_row(e, b_x)?;
    pad_rows(g, e, t_max)
}

pub fn embed_and_pad_source(
    tokens: &TokenSequence,
    w_x: &Tensor,
    b_x: &Tensor,
    t_max: usize,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let (w, b) = (g.constant(w_x.clone()), g.constant(b_x.clone()));
    let h = embed_and_pad_source_var(&mut g, tokens, w, b, t_max)?;
    Ok(g.value(h).clone())
}

/// Row-wise `[manual | face]` concatenation.
pub fn concat_channels(manual: &[Vec<f64>], face: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if manual.len() != face.len() {
        return Err(Error::contract(format!(
            "manual has {} frames but face has {}",
            manual.len(),
            face.len()
        )));
    }
    Ok(manual
        .iter()
        .zip(face)
        .map(|(m, f)| {
            let mut row = m.clone();
            row.extend_from_slice(f);
            row
        })
        .collect())
}

/// Inverse of [`concat_channels`] for a given manual width.
pub fn split_channels(rows: &[Vec<f64>], manual_width: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    rows.iter()
        .map(|r| (r[..manual_width].to_vec(), r[manual_width..].to_vec()))
        .unzip()
}

//! Plain-text corpus, vocabulary and primitive-bank files.
//!
//! Corpus files start with a header naming the layout, then one record per
//! example:
//!
//! ```text
//! spgan-corpus 1 manual_joints=4 face_landmarks=3
//! example syn00000 frames=30
//! tokens 3 17 5
//! 0.1234 -0.5 ...        (one row of pose values per frame)
//! ```
//!
//! Counters are not stored; they are the linear progress ramp of the frame
//! count. Floats are written in shortest round-trip form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use spgan_core::pose::{ChannelLayout, Corpus, CorpusExample, PoseSequence, TokenSequence, Vocabulary, PAD_WORD};
use spgan_core::synth::{Primitive, PrimitiveBank};

use crate::error::{io_err, Error, Result};

const CORPUS_MAGIC: &str = "spgan-corpus";
const BANK_MAGIC: &str = "spgan-primitives";
const VERSION: &str = "1";

fn push_row(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{v}").expect("writing to a String");
    }
    out.push('\n');
}

fn layout_header(magic: &str, layout: ChannelLayout) -> String {
    format!(
        "{magic} {VERSION} manual_joints={} face_landmarks={}\n",
        layout.manual_joints, layout.face_landmarks
    )
}

pub fn format_sequence_rows(out: &mut String, seq: &PoseSequence) {
    for f in seq.frames() {
        push_row(out, &f.values);
    }
}

pub fn format_corpus(corpus: &Corpus) -> String {
    let mut out = layout_header(CORPUS_MAGIC, corpus.layout);
    for ex in &corpus.examples {
        writeln!(out, "example {} frames={}", ex.id, ex.target.len()).expect("writing to a String");
        out.push_str("tokens");
        for t in ex.source.ids() {
            write!(out, " {t}").expect("writing to a String");
        }
        out.push('\n');
        format_sequence_rows(&mut out, &ex.target);
    }
    out
}

struct Lines<'a> {
    origin: &'a str,
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Lines<'a> {
    fn new(origin: &'a str, text: &'a str) -> Self {
        Lines {
            origin,
            inner: text.lines().enumerate().peekable(),
        }
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            origin: self.origin.to_string(),
            line,
            msg: msg.into(),
        }
    }

    /// Next non-blank line with its 1-based number.
    fn next(&mut self) -> Option<(usize, &'a str)> {
        for (i, l) in self.inner.by_ref() {
            if !l.trim().is_empty() {
                return Some((i + 1, l.trim()));
            }
        }
        None
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let last = self.inner.peek().map(|(i, _)| i + 1).unwrap_or(0);
        self.next()
            .ok_or_else(|| self.err(last, format!("unexpected end of file, expected {what}")))
    }
}

fn parse_key<'a>(lines: &Lines, line: usize, field: &'a str, key: &str) -> Result<&'a str> {
    field
        .strip_prefix(key)
        .and_then(|r| r.strip_prefix('='))
        .ok_or_else(|| lines.err(line, format!("expected `{key}=<value>`, found `{field}`")))
}

fn parse_usize(lines: &Lines, line: usize, s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| lines.err(line, format!("`{s}` is not a non-negative integer")))
}

fn parse_header(lines: &mut Lines, magic: &str) -> Result<ChannelLayout> {
    let (n, header) = lines.expect("header")?;
    let f: Vec<&str> = header.split_whitespace().collect();
    if f.len() != 4 || f[0] != magic {
        return Err(lines.err(n, format!("expected `{magic} {VERSION} manual_joints=J face_landmarks=K`")));
    }
    if f[1] != VERSION {
        return Err(lines.err(n, format!("unsupported version {}", f[1])));
    }
    let mj = parse_usize(lines, n, parse_key(lines, n, f[2], "manual_joints")?)?;
    let fl = parse_usize(lines, n, parse_key(lines, n, f[3], "face_landmarks")?)?;
    ChannelLayout::new(mj, fl).map_err(|e| lines.err(n, e.to_string()))
}

fn parse_rows(lines: &mut Lines, count: usize, width: usize, what: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::with_capacity(count);
    for r in 0..count {
        let (n, l) = lines.expect(&format!("row {r} of {what}"))?;
        let row = l
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| lines.err(n, format!("`{v}` is not a number"))))
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != width {
            return Err(lines.err(
                n,
                format!("row {r} of {what} has {} values, expected {width}", row.len()),
            ));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(lines.err(n, format!("row {r} of {what} has a non-finite value")));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Parses pose rows of the given layout (no header), e.g. a generated sequence.
pub fn parse_sequence(origin: &str, text: &str, layout: ChannelLayout) -> Result<PoseSequence> {
    let mut lines = Lines::new(origin, text);
    let mut rows = Vec::new();
    while let Some((n, l)) = lines.next() {
        let row = l
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| lines.err(n, format!("`{v}` is not a number"))))
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != layout.pose_dim() {
            return Err(lines.err(
                n,
                format!("row {} has {} values, expected {}", rows.len(), row.len(), layout.pose_dim()),
            ));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(lines.err(0, "sequence has no frames"));
    }
    Ok(PoseSequence::from_rows(layout, rows)?)
}

pub fn parse_corpus(origin: &str, text: &str) -> Result<Corpus> {
    let mut lines = Lines::new(origin, text);
    if text.trim().is_empty() {
        return Err(Error::EmptyCorpus {
            origin: origin.to_string(),
        });
    }
    let layout = parse_header(&mut lines, CORPUS_MAGIC)?;
    let mut examples = Vec::new();
    while let Some((n, l)) = lines.next() {
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 3 || f[0] != "example" {
            return Err(lines.err(n, "expected `example <id> frames=<U>`"));
        }
        let id = f[1].to_string();
        let frames = parse_usize(&lines, n, parse_key(&lines, n, f[2], "frames")?)?;
        if frames == 0 {
            return Err(lines.err(n, format!("example {id} has no frames")));
        }
        let (tn, tl) = lines.expect("token line")?;
        let mut tf = tl.split_whitespace();
        if tf.next() != Some("tokens") {
            return Err(lines.err(tn, "expected `tokens <id> ...`"));
        }
        let tokens = tf
            .map(|t| parse_usize(&lines, tn, t))
            .collect::<Result<Vec<usize>>>()?;
        if tokens.is_empty() {
            return Err(lines.err(tn, format!("example {id} has no tokens")));
        }
        let rows = parse_rows(&mut lines, frames, layout.pose_dim(), &format!("example {id}"))?;
        examples.push(CorpusExample {
            id,
            source: TokenSequence(tokens),
            target: PoseSequence::from_rows(layout, rows)?,
        });
    }
    if examples.is_empty() {
        return Err(Error::EmptyCorpus {
            origin: origin.to_string(),
        });
    }
    Ok(Corpus::new(layout, examples)?)
}

pub fn format_vocabulary(vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for w in vocab.words() {
        out.push_str(w);
        out.push('\n');
    }
    out
}

/// One word per line; line 1 must be the padding entry.
pub fn parse_vocabulary(origin: &str, text: &str) -> Result<Vocabulary> {
    let mut words = text.lines();
    let err = |line, msg: String| Error::Parse {
        origin: origin.to_string(),
        line,
        msg,
    };
    match words.next() {
        Some(PAD_WORD) => {}
        _ => return Err(err(1, format!("first line must be `{PAD_WORD}`"))),
    }
    let rest: Vec<&str> = words.collect();
    if let Some(i) = rest.iter().position(|w| w.is_empty()) {
        return Err(err(i + 2, "blank vocabulary entry".into()));
    }
    Vocabulary::from_words(rest).map_err(|e| err(0, e.to_string()))
}

pub fn format_bank(bank: &PrimitiveBank) -> String {
    let mut out = layout_header(BANK_MAGIC, bank.layout);
    writeln!(out, "motif_len={}", bank.motif_len).expect("writing to a String");
    for p in &bank.primitives {
        writeln!(out, "primitive token={} variant={}", p.token, p.variant).expect("writing to a String");
        for f in &p.frames {
            push_row(&mut out, f);
        }
    }
    out
}

pub fn parse_bank(origin: &str, text: &str) -> Result<PrimitiveBank> {
    let mut lines = Lines::new(origin, text);
    let layout = parse_header(&mut lines, BANK_MAGIC)?;
    let (n, l) = lines.expect("motif_len")?;
    let motif_len = parse_usize(&lines, n, parse_key(&lines, n, l, "motif_len")?)?;
    if motif_len == 0 {
        return Err(lines.err(n, "motif_len must be positive"));
    }
    let mut primitives = Vec::new();
    while let Some((n, l)) = lines.next() {
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 3 || f[0] != "primitive" {
            return Err(lines.err(n, "expected `primitive token=<id> variant=<v>`"));
        }
        let token = parse_usize(&lines, n, parse_key(&lines, n, f[1], "token")?)?;
        let variant = parse_usize(&lines, n, parse_key(&lines, n, f[2], "variant")?)?;
        let frames = parse_rows(
            &mut lines,
            motif_len,
            layout.pose_dim(),
            &format!("primitive {token}/{variant}"),
        )?;
        primitives.push(Primitive { token, variant, frames });
    }
    if primitives.is_empty() {
        return Err(lines.err(0, "primitive bank is empty"));
    }
    Ok(PrimitiveBank {
        layout,
        motif_len,
        primitives,
    })
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    parse_corpus(&path.display().to_string(), &read_text(path)?)
}

pub fn save_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    write_text(path, &format_corpus(corpus))
}

pub fn load_vocabulary(path: &Path) -> Result<Vocabulary> {
    parse_vocabulary(&path.display().to_string(), &read_text(path)?)
}

pub fn save_vocabulary(path: &Path, vocab: &Vocabulary) -> Result<()> {
    write_text(path, &format_vocabulary(vocab))
}

pub fn load_bank(path: &Path) -> Result<PrimitiveBank> {
    parse_bank(&path.display().to_string(), &read_text(path)?)
}

pub fn save_bank(path: &Path, bank: &PrimitiveBank) -> Result<()> {
    write_text(path, &format_bank(bank))
}

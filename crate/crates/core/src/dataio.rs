//! Dataset I/O, noise injection, feature standardization and fold plans.
//!
//! Two on-disk formats are supported. The plain format:
//!
//! ```text
//! n d c
//! x_11 ... x_1d | y_11 ... y_1c
//! ...
//! #truth
//! t_11 ... t_1c
//! ...
//! ```
//!
//! where the `#truth` block is optional. The ARFF subset accepts numeric
//! attributes with the `c` label attributes last (MULAN convention); label
//! values may be `0`/`1` or `FALSE`/`TRUE`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PmlError, Result};
use crate::linalg::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Plain,
    Arff,
}

impl std::str::FromStr for Format {
    type Err = PmlError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "plain" => Ok(Format::Plain),
            "arff" => Ok(Format::Arff),
            other => Err(PmlError::invalid(format!("unknown format '{other}'"))),
        }
    }
}

/// Features, candidate labels and (optionally) ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Mat,
    pub y_candidate: Mat,
    pub y_truth: Option<Mat>,
    pub names: Option<Vec<String>>,
}

impl Dataset {
    /// Validates the label invariants and builds the dataset.
    pub fn new(x: Mat, y_candidate: Mat, y_truth: Option<Mat>) -> Result<Self> {
        let ds = Dataset {
            x,
            y_candidate,
            y_truth,
            names: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn c(&self) -> usize {
        self.y_candidate.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.nrows();
        if self.y_candidate.nrows() != n {
            return Err(PmlError::invalid(format!(
                "feature rows ({n}) and label rows ({}) differ",
                self.y_candidate.nrows()
            )));
        }
        if let Some((i, _)) = self.x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(PmlError::Validation {
                row: i % n.max(1),
                message: "non-finite feature value".into(),
            });
        }
        check_binary(&self.y_candidate, "candidate")?;
        for (i, row) in self.y_candidate.row_iter().enumerate() {
            if row.sum() < 1.0 {
                return Err(PmlError::Validation {
                    row: i,
                    message: "row has no candidate label".into(),
                });
            }
        }
        if let Some(t) = &self.y_truth {
            if t.shape() != self.y_candidate.shape() {
                return Err(PmlError::invalid("truth and candidate shapes differ"));
            }
            check_binary(t, "truth")?;
            for i in 0..n {
                for j in 0..t.ncols() {
                    if t[(i, j)] > self.y_candidate[(i, j)] {
                        return Err(PmlError::Validation {
                            row: i,
                            message: format!("truth label {j} is not a candidate"),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Ground truth when present, otherwise the candidates.
    pub fn truth_or_candidates(&self) -> &Mat {
        self.y_truth.as_ref().unwrap_or(&self.y_candidate)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: select_rows(&self.x, rows),
            y_candidate: select_rows(&self.y_candidate, rows),
            y_truth: self.y_truth.as_ref().map(|t| select_rows(t, rows)),
            names: self.names.clone(),
        }
    }

    pub fn avg_candidates(&self) -> f64 {
        mean_row_sum(&self.y_candidate)
    }
}

pub fn select_rows(m: &Mat, rows: &[usize]) -> Mat {
    Mat::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

pub fn mean_row_sum(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.sum() / m.nrows() as f64
}

fn check_binary(m: &Mat, what: &str) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let v = m[(i, j)];
            if v != 0.0 && v != 1.0 {
                return Err(PmlError::Validation {
                    row: i,
                    message: format!("{what} label {j} is {v}, expected 0 or 1"),
                });
            }
        }
    }
    Ok(())
}

fn parse_err(line: usize, message: impl Into<String>) -> PmlError {
    PmlError::Parse {
        line,
        message: message.into(),
    }
}

/// `labels` is the number of trailing label attributes and is required for ARFF.
pub fn load_dataset(path: &Path, format: Format, labels: Option<usize>) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    match format {
        Format::Plain => parse_plain(&text),
        Format::Arff => {
            let c = labels
                .ok_or_else(|| PmlError::invalid("ARFF input needs the label count (--labels)"))?;
            parse_arff(&text, c)
        }
    }
}

pub fn save_dataset(ds: &Dataset, path: &Path, format: Format) -> Result<()> {
    let text = match format {
        Format::Plain => to_plain(ds),
        Format::Arff => to_arff(ds),
    };
    fs::write(path, text)?;
    Ok(())
}

fn parse_label(tok: &str, line: usize) -> Result<f64> {
    match tok.trim_matches(|c| c == '"' || c == '\'') {
        "0" | "FALSE" | "false" => Ok(0.0),
        "1" | "TRUE" | "true" => Ok(1.0),
        other => Err(parse_err(
            line,
            format!("label value '{other}' is not 0 or 1"),
        )),
    }
}

fn parse_real(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(line, format!("'{tok}' is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite value '{tok}'")));
    }
    Ok(v)
}

pub fn parse_plain(text: &str) -> Result<Dataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| parse_err(hline, "header must be 'n d c'"))?;
    let &[n, d, c] = dims.as_slice() else {
        return Err(parse_err(hline, "header must be 'n d c'"));
    };

    let mut x = Mat::zeros(n, d);
    let mut y = Mat::zeros(n, c);
    for i in 0..n {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| parse_err(hline, format!("expected {n} data rows, found {i}")))?;
        let (feat, lab) = line
            .split_once('|')
            .ok_or_else(|| parse_err(ln, "missing '|' separator"))?;
        let feats: Vec<&str> = feat.split_whitespace().collect();
        let labs: Vec<&str> = lab.split_whitespace().collect();
        if feats.len() != d {
            return Err(parse_err(
                ln,
                format!("expected {d} features, found {}", feats.len()),
            ));
        }
        if labs.len() != c {
            return Err(parse_err(
                ln,
                format!("expected {c} labels, found {}", labs.len()),
            ));
        }
        for (j, t) in feats.iter().enumerate() {
            x[(i, j)] = parse_real(t, ln)?;
        }
        for (j, t) in labs.iter().enumerate() {
            y[(i, j)] = parse_label(t, ln)?;
        }
    }

    let mut truth = None;
    if let Some((ln, line)) = lines.next() {
        if line != "#truth" {
            return Err(parse_err(
                ln,
                format!("unexpected trailing content '{line}'"),
            ));
        }
        let mut t = Mat::zeros(n, c);
        for i in 0..n {
            let (tl, row) = lines
                .next()
                .ok_or_else(|| parse_err(ln, format!("truth block has {i} of {n} rows")))?;
            let toks: Vec<&str> = row.split_whitespace().collect();
            if toks.len() != c {
                return Err(parse_err(
                    tl,
                    format!("expected {c} truth labels, found {}", toks.len()),
                ));
            }
            for (j, tok) in toks.iter().enumerate() {
                t[(i, j)] = parse_label(tok, tl)?;
            }
        }
        if let Some((extra, _)) = lines.next() {
            return Err(parse_err(extra, "unexpected content after truth block"));
        }
        truth = Some(t);
    }
    Dataset::new(x, y, truth)
}

fn write_label_row(out: &mut String, m: &Mat, i: usize) {
    for j in 0..m.ncols() {
        if j > 0 {
            out.push(' ');
        }
        out.push(if m[(i, j)] != 0.0 { '1' } else { '0' });
    }
}

pub fn to_plain(ds: &Dataset) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {} {}", ds.n(), ds.d(), ds.c());
    for i in 0..ds.n() {
        for j in 0..ds.d() {
            let _ = write!(out, "{} ", ds.x[(i, j)]);
        }
        out.push_str("| ");
        write_label_row(&mut out, &ds.y_candidate, i);
        out.push('\n');
    }
    if let Some(t) = &ds.y_truth {
        out.push_str("#truth\n");
        for i in 0..ds.n() {
            write_label_row(&mut out, t, i);
            out.push('\n');
        }
    }
    out
}

#[derive(Debug)]
struct ArffAttribute {
    name: String,
    nominal: bool,
}

fn parse_attribute(rest: &str, line: usize) -> Result<ArffAttribute> {
    let rest = rest.trim();
    let (name, kind) = if let Some(stripped) = rest.strip_prefix('\'') {
        let end = stripped
            .find('\'')
            .ok_or_else(|| parse_err(line, "unterminated attribute name"))?;
        (stripped[..end].to_string(), stripped[end + 1..].trim())
    } else {
        let mut it = rest.splitn(2, char::is_whitespace);
        let name = it.next().unwrap_or_default().to_string();
        (name, it.next().unwrap_or_default().trim())
    };
    let lower = kind.to_ascii_lowercase();
    if lower == "numeric" || lower == "real" || lower == "integer" {
        Ok(ArffAttribute {
            name,
            nominal: false,
        })
    } else if kind.starts_with('{') {
        Ok(ArffAttribute {
            name,
            nominal: true,
        })
    } else {
        Err(parse_err(
            line,
            format!("unsupported attribute type '{kind}'"),
        ))
    }
}

pub fn parse_arff(text: &str, c: usize) -> Result<Dataset> {
    let mut attrs: Vec<ArffAttribute> = Vec::new();
    let mut in_data = false;
    let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        if !in_data {
            let lower = line.to_ascii_lowercase();
            if lower.starts_with("@relation") {
                continue;
            } else if lower.starts_with("@attribute") {
                attrs.push(parse_attribute(&line["@attribute".len()..], ln)?);
            } else if lower.starts_with("@data") {
                in_data = true;
            } else {
                return Err(parse_err(ln, format!("unexpected header line '{line}'")));
            }
        } else {
            if line.starts_with('{') {
                return Err(parse_err(ln, "sparse ARFF rows are not supported"));
            }
            rows.push((ln, line.split(',').map(|t| t.trim().to_string()).collect()));
        }
    }
    if !in_data {
        return Err(parse_err(
            text.lines().count().max(1),
            "missing @data section",
        ));
    }
    if c == 0 || c > attrs.len() {
        return Err(PmlError::invalid(format!(
            "label count {c} incompatible with {} attributes",
            attrs.len()
        )));
    }
    let d = attrs.len() - c;
    if let Some((j, a)) = attrs[..d].iter().enumerate().find(|(_, a)| a.nominal) {
        return Err(PmlError::invalid(format!(
            "feature attribute {j} ('{}') is not numeric",
            a.name
        )));
    }
    let n = rows.len();
    let mut x = Mat::zeros(n, d);
    let mut y = Mat::zeros(n, c);
    for (i, (ln, toks)) in rows.iter().enumerate() {
        if toks.len() != attrs.len() {
            return Err(parse_err(
                *ln,
                format!("expected {} values, found {}", attrs.len(), toks.len()),
            ));
        }
        for j in 0..d {
            if toks[j] == "?" {
                return Err(parse_err(*ln, "missing values are not supported"));
            }
            x[(i, j)] = parse_real(&toks[j], *ln)?;
        }
        for j in 0..c {
            y[(i, j)] = parse_label(&toks[d + j], *ln)?;
        }
    }
    let mut ds = Dataset::new(x, y, None)?;
    ds.names = Some(attrs[d..].iter().map(|a| a.name.clone()).collect());
    Ok(ds)
}

pub fn to_arff(ds: &Dataset) -> String {
    let mut out = String::from("@relation pmlma\n");
    for j in 0..ds.d() {
        let _ = writeln!(out, "@attribute f{j} numeric");
    }
    for j in 0..ds.c() {
        match ds.names.as_ref().and_then(|n| n.get(j)) {
            Some(name) => {
                let _ = writeln!(out, "@attribute '{name}' {{0,1}}");
            }
            None => {
                let _ = writeln!(out, "@attribute label{j} {{0,1}}");
            }
        }
    }
    out.push_str("@data\n");
    for i in 0..ds.n() {
        let mut parts: Vec<String> = (0..ds.d()).map(|j| format!("{}", ds.x[(i, j)])).collect();
        parts.extend((0..ds.c()).map(|j| {
            if ds.y_candidate[(i, j)] != 0.0 {
                "1".to_string()
            } else {
                "0".to_string()
            }
        }));
        out.push_str(&parts.join(","));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseModel {
    /// Uniform over all negative entries of the matrix.
    #[default]
    Global,
    /// Rows are visited in a seeded random order, one extra label each pass.
    PerRow,
}

impl std::str::FromStr for NoiseModel {
    type Err = PmlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(NoiseModel::Global),
            "per-row" => Ok(NoiseModel::PerRow),
            other => Err(PmlError::invalid(format!("unknown noise model '{other}'"))),
        }
    }
}

/// Adds false-positive candidate labels until the mean candidate count per
/// row first reaches `target_avg_cls`. Never removes a truth label.
pub fn inject_noise(truth: &Mat, target_avg_cls: f64, seed: u64, model: NoiseModel) -> Result<Mat> {
    let (n, c) = truth.shape();
    check_binary(truth, "truth")?;
    let current = mean_row_sum(truth);
    if !target_avg_cls.is_finite() || target_avg_cls < current - 1e-12 {
        return Err(PmlError::invalid(format!(
            "target average {target_avg_cls} is below the truth average {current}"
        )));
    }
    if target_avg_cls > c as f64 + 1e-12 {
        return Err(PmlError::invalid(format!(
            "target average {target_avg_cls} exceeds the label count {c}"
        )));
    }
    let mut y = truth.clone();
    if n == 0 {
        return Ok(y);
    }
    // the mean is tracked through an integer count to stay exact
    let needed = (target_avg_cls * n as f64 - 1e-9).ceil().max(0.0) as usize;
    let mut total = truth.sum().round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    match model {
        NoiseModel::Global => {
            let mut zeros: Vec<(usize, usize)> = (0..n)
                .flat_map(|i| (0..c).map(move |j| (i, j)))
                .filter(|&(i, j)| truth[(i, j)] == 0.0)
                .collect();
            zeros.shuffle(&mut rng);
            for (i, j) in zeros {
                if total >= needed {
                    break;
                }
                y[(i, j)] = 1.0;
                total += 1;
            }
        }
        NoiseModel::PerRow => {
            let mut free: Vec<Vec<usize>> = (0..n)
                .map(|i| (0..c).filter(|&j| truth[(i, j)] == 0.0).collect())
                .collect();
            for f in free.iter_mut() {
                f.shuffle(&mut rng);
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            while total < needed {
                let mut progressed = false;
                for &i in &order {
                    if total >= needed {
                        break;
                    }
                    if let Some(j) = free[i].pop() {
                        y[(i, j)] = 1.0;
                        total += 1;
                        progressed = true;
                    }
                }
                if !progressed {
                    break;
                }
            }
        }
    }
    Ok(y)
}

/// Per-column z-score parameters. Zero-variance columns map to zero.
/// With `bias` set, a constant column of ones is appended after scaling so a
/// linear classifier on the output has an intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    #[serde(default)]
    pub bias: bool,
}

impl Standardizer {
    /// Fits on the given rows (all rows when `rows` is `None`).
    pub fn fit(x: &Mat, rows: Option<&[usize]>) -> Result<Self> {
        let all: Vec<usize>;
        let rows = match rows {
            Some(r) => r,
            None => {
                all = (0..x.nrows()).collect();
                &all
            }
        };
        if rows.len() < 2 {
            return Err(PmlError::invalid("standardization needs at least two rows"));
        }
        let n = rows.len() as f64;
        let d = x.ncols();
        let mut mean = vec![0.0; d];
        let mut std = vec![0.0; d];
        for j in 0..d {
            let m = rows.iter().map(|&i| x[(i, j)]).sum::<f64>() / n;
            let var = rows.iter().map(|&i| (x[(i, j)] - m).powi(2)).sum::<f64>() / n;
            mean[j] = m;
            let s = var.sqrt();
            std[j] = if s > 1e-12 * m.abs().max(1.0) { s } else { 0.0 };
        }
        Ok(Standardizer {
            mean,
            std,
            bias: false,
        })
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    /// Number of columns produced by [`Standardizer::transform`].
    pub fn output_dim(&self) -> usize {
        self.mean.len() + usize::from(self.bias)
    }

    pub fn transform(&self, x: &Mat) -> Result<Mat> {
        if x.ncols() != self.mean.len() {
            return Err(PmlError::invalid(format!(
                "standardizer expects {} features, got {}",
                self.mean.len(),
                x.ncols()
            )));
        }
        let d = x.ncols();
        Ok(Mat::from_fn(x.nrows(), self.output_dim(), |i, j| {
            if j == d {
                1.0
            } else if self.std[j] > 0.0 {
                (x[(i, j)] - self.mean[j]) / self.std[j]
            } else {
                0.0
            }
        }))
    }
}

pub fn standardize_features(x: &Mat) -> Result<Mat> {
    Standardizer::fit(x, None)?.transform(x)
}

/// Seeded assignment of instances to cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub fold_count: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.fold_count];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Shuffles `0..n` with the seed and cuts the permutation into `folds`
/// contiguous blocks whose sizes differ by at most one.
pub fn kfold_split(n: usize, folds: usize, seed: u64) -> Result<FoldPlan> {
    if folds < 2 || folds > n {
        return Err(PmlError::invalid(format!(
            "fold count must satisfy 2 <= folds <= n (folds = {folds}, n = {n})"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / folds;
    let extra = n % folds;
    let mut assignments = vec![0; n];
    let mut pos = 0;
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        for &i in &perm[pos..pos + size] {
            assignments[i] = f;
        }
        pos += size;
    }
    Ok(FoldPlan {
        fold_count: folds,
        assignments,
        seed,
    })
}

/// Parameters of the synthetic multi-label generator.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub c: usize,
    /// Maximum true labels per instance (each instance draws 1..=max).
    pub max_true_labels: usize,
    /// Standard deviation of the feature noise around the prototype sum.
    pub noise: f64,
    /// Candidate average after noise injection; `None` keeps candidates clean.
    pub target_avg_cls: Option<f64>,
    pub seed: u64,
}

/// Instances are sums of class prototypes (one Gaussian prototype per label)
/// plus isotropic noise. Truth labels are the prototypes used.
pub fn synthetic_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    let SyntheticSpec { n, d, c, .. } = *spec;
    if c == 0 || spec.max_true_labels == 0 || spec.max_true_labels > c {
        return Err(PmlError::invalid("max_true_labels must be in 1..=c"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let protos = Mat::from_fn(c, d, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        3.0 * z
    });
    let mut x = Mat::zeros(n, d);
    let mut truth = Mat::zeros(n, c);
    let mut labels: Vec<usize> = (0..c).collect();
    for i in 0..n {
        let count = rng.random_range(1..=spec.max_true_labels);
        labels.shuffle(&mut rng);
        for &l in &labels[..count] {
            truth[(i, l)] = 1.0;
            for j in 0..d {
                x[(i, j)] += protos[(l, j)];
            }
        }
        for j in 0..d {
            let e: f64 = StandardNormal.sample(&mut rng);
            x[(i, j)] += spec.noise * e;
        }
    }
    let candidates = match spec.target_avg_cls {
        Some(t) => inject_noise(
            &truth,
            t,
            spec.seed ^ 0x9e37_79b9_7f4a_7c15,
            NoiseModel::Global,
        )?,
        None => truth.clone(),
    };
    Dataset::new(x, candidates, Some(truth))
}

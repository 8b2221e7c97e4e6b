//! Segmentation metrics: pooled boundary MCC and exact-span precision,
//! recall and F1.

use std::fmt;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::segmentation::{BoundaryVector, Segmentation};

/// How per-line span counts are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Aggregation {
    /// Sum counts over the corpus, then divide.
    #[default]
    Micro,
    /// Average per-line precision and recall.
    Macro,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    /// Matthews correlation; 0 when any marginal is empty.
    pub fn mcc(&self) -> f64 {
        let (tp, tn, fp, fn_) = (self.tp as f64, self.tn as f64, self.fp as f64, self.fn_ as f64);
        let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
        if denom == 0.0 {
            return 0.0;
        }
        (tp * tn - fp * fn_) / denom.sqrt()
    }
}

/// Gap-level confusion counts pooled over all lines.
pub fn confusion(pred: &[BoundaryVector], gold: &[BoundaryVector]) -> Result<Confusion> {
    if pred.len() != gold.len() {
        return Err(Error::Data(format!(
            "{} predicted lines vs {} gold lines",
            pred.len(),
            gold.len()
        )));
    }
    let mut c = Confusion::default();
    for (n, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Data(format!(
                "line {}: {} predicted gaps vs {} gold gaps",
                n + 1,
                p.len(),
                g.len()
            )));
        }
        for (&pb, &gb) in p.0.iter().zip(&g.0) {
            match (pb, gb) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
            }
        }
    }
    Ok(c)
}

pub fn mcc(pred: &[BoundaryVector], gold: &[BoundaryVector]) -> Result<f64> {
    Ok(confusion(pred, gold)?.mcc())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf { precision, recall, f1 }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Predicted segments matching a gold `(start, end)` span exactly. Both
/// span lists are increasing, so a merge walk suffices.
fn correct_spans(pred: &Segmentation, gold: &Segmentation) -> usize {
    let (mut p, mut g) = (pred.spans().peekable(), gold.spans().peekable());
    let mut n = 0;
    while let (Some(&a), Some(&b)) = (p.peek(), g.peek()) {
        if a == b {
            n += 1;
            p.next();
            g.next();
        } else if a.0 < b.0 || (a.0 == b.0 && a.1 < b.1) {
            p.next();
        } else {
            g.next();
        }
    }
    n
}

pub fn span_prf(pred: &[Segmentation], gold: &[Segmentation]) -> Result<Prf> {
    span_prf_with(pred, gold, Aggregation::Micro)
}

pub fn span_prf_with(pred: &[Segmentation], gold: &[Segmentation], agg: Aggregation) -> Result<Prf> {
    if pred.len() != gold.len() {
        return Err(Error::Data(format!(
            "{} predicted lines vs {} gold lines",
            pred.len(),
            gold.len()
        )));
    }
    if let Some(n) = pred.iter().zip(gold).position(|(p, g)| p.len() != g.len()) {
        return Err(Error::Data(format!(
            "line {}: {} predicted characters vs {} gold characters",
            n + 1,
            pred[n].len(),
            gold[n].len()
        )));
    }
    match agg {
        Aggregation::Micro => {
            let (mut correct, mut np, mut ng) = (0, 0, 0);
            for (p, g) in pred.iter().zip(gold) {
                correct += correct_spans(p, g);
                np += p.num_segments();
                ng += g.num_segments();
            }
            Ok(Prf::new(ratio(correct, np), ratio(correct, ng)))
        }
        Aggregation::Macro => {
            if pred.is_empty() {
                return Ok(Prf::new(0.0, 0.0));
            }
            let (mut sp, mut sr) = (0.0, 0.0);
            for (p, g) in pred.iter().zip(gold) {
                let c = correct_spans(p, g);
                sp += ratio(c, p.num_segments());
                sr += ratio(c, g.num_segments());
            }
            let n = pred.len() as f64;
            Ok(Prf::new(sp / n, sr / n))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mcc: f64,
    pub lines: usize,
    pub bpc: Option<f64>,
}

impl EvalReport {
    pub const TSV_HEADER: &'static str = "P\tR\tF1\tMCC\tlines";

    pub fn from_segmentations(pred: &[Segmentation], gold: &[Segmentation], agg: Aggregation) -> Result<Self> {
        let prf = span_prf_with(pred, gold, agg)?;
        let pb: Vec<_> = pred.iter().map(Segmentation::to_boundary_vector).collect();
        let gb: Vec<_> = gold.iter().map(Segmentation::to_boundary_vector).collect();
        Ok(EvalReport {
            precision: prf.precision,
            recall: prf.recall,
            f1: prf.f1,
            mcc: mcc(&pb, &gb)?,
            lines: pred.len(),
            bpc: None,
        })
    }

    pub fn tsv(&self) -> String {
        format!(
            "{}\n{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
            Self::TSV_HEADER,
            self.precision,
            self.recall,
            self.f1,
            self.mcc,
            self.lines
        )
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "lines evaluated: {}", self.lines)?;
        writeln!(f, "precision: {:.4} ({:.1})", self.precision, 100.0 * self.precision)?;
        writeln!(f, "recall:    {:.4} ({:.1})", self.recall, 100.0 * self.recall)?;
        writeln!(f, "F1:        {:.4} ({:.1})", self.f1, 100.0 * self.f1)?;
        writeln!(f, "MCC:       {:.4}", self.mcc)?;
        if let Some(b) = self.bpc {
            writeln!(f, "bpc:       {b:.4}")?;
        }
        write!(f, "\n{}", self.tsv())
    }
}

fn parse_lines(text: &str) -> Vec<(Vec<char>, Segmentation)> {
    text.lines().map(|l| Segmentation::parse(&l.nfc().collect::<String>())).collect()
}

/// Scores space-segmented predictions against space-segmented gold text.
/// Lines blank in both files are skipped; any other difference in
/// character streams is an error naming the first offending line.
pub fn evaluate_texts(pred: &str, gold: &str, agg: Aggregation) -> Result<EvalReport> {
    let (p, g) = (parse_lines(pred), parse_lines(gold));
    if p.len() != g.len() {
        return Err(Error::Data(format!(
            "prediction has {} lines but gold has {}",
            p.len(),
            g.len()
        )));
    }
    let (mut ps, mut gs) = (Vec::new(), Vec::new());
    for (n, ((pc, pseg), (gc, gseg))) in p.into_iter().zip(g).enumerate() {
        if pc != gc {
            return Err(Error::Data(format!(
                "line {}: characters differ between prediction and gold",
                n + 1
            )));
        }
        if !pc.is_empty() {
            ps.push(pseg);
            gs.push(gseg);
        }
    }
    if gs.is_empty() {
        return Err(Error::Data("nothing to evaluate: gold has no non-blank lines".into()));
    }
    EvalReport::from_segmentations(&ps, &gs, agg)
}

pub fn evaluate(pred: impl AsRef<Path>, gold: impl AsRef<Path>, agg: Aggregation) -> Result<EvalReport> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
    evaluate_texts(&read(pred.as_ref())?, &read(gold.as_ref())?, agg)
}

//! Per-class attention explanations of one utterance and their renderings.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use xnlu_tensor::{kernels, Graph, Real};

use crate::corpus::{LabelMaps, Vocab};
use crate::error::{Error, Result};
use crate::model::{argmax, Model};

pub const SCHEMA_VERSION: u32 = 1;

/// JSON Schema of [`ExplanationBundle`].
pub const EXPLANATION_SCHEMA: &str = include_str!("../schema/explanation.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentExplanation {
    pub name: String,
    /// Attention over the tokens.
    pub alpha: Vec<f64>,
    pub binary_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotExplanation {
    pub name: String,
    /// `l × l`; row `t` is token `t`'s attention over the utterance.
    pub alpha: Vec<Vec<f64>>,
    /// Per token, probability of belonging to this class.
    pub binary_probs: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionLabels {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intent: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tags: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationBundle {
    pub schema_version: u32,
    pub tokens: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intents: Option<Vec<IntentExplanation>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slots: Option<Vec<SlotExplanation>>,
    pub prediction: PredictionLabels,
}

impl ExplanationBundle {
    /// Checks what the schema cannot: lengths match the tokens and every
    /// attention vector sums to one within `tol`.
    pub fn check(&self, tol: f64) -> Result<()> {
        let l = self.tokens.len();
        let vector = |what: &str, v: &[f64]| -> Result<()> {
            if v.len() != l {
                return Err(Error::Value(format!("{what} has {} weights for {l} tokens", v.len())));
            }
            let sum: f64 = v.iter().sum();
            if (sum - 1.0).abs() > tol {
                return Err(Error::Value(format!("{what} sums to {sum}")));
            }
            Ok(())
        };
        for c in self.intents.iter().flatten() {
            vector(&format!("intent `{}`", c.name), &c.alpha)?;
        }
        for c in self.slots.iter().flatten() {
            if c.alpha.len() != l || c.binary_probs.len() != l {
                return Err(Error::Value(format!("slot `{}` is not {l} × {l}", c.name)));
            }
            for (t, row) in c.alpha.iter().enumerate() {
                vector(&format!("slot `{}` row {t}", c.name), row)?;
            }
        }
        Ok(())
    }
}

/// Runs the model on `tokens` and collects every class's attention.
pub fn explain<T: Real>(model: &Model<T>, tokens: &[String], vocab: &Vocab, maps: &LabelMaps) -> Result<ExplanationBundle> {
    if tokens.is_empty() {
        return Err(Error::Usage("cannot explain an empty utterance".into()));
    }
    let ids = vocab.encode(tokens);
    let l = ids.len();
    let mut g = Graph::inference();
    let fwd = model.forward(&mut g, &ids, &vec![true; l], 0.0)?;
    let sigmoid = |x: f64| kernels::sigmoid(x);

    let intents = fwd.intent.as_ref().map(|trace| {
        let binary = g.value(trace.binary_logits).to_f64_vec();
        trace
            .attention
            .iter()
            .enumerate()
            .map(|(i, &a)| IntentExplanation {
                name: maps.intents.name(i).to_string(),
                alpha: g.value(a).to_f64_vec(),
                binary_prob: sigmoid(binary[i]),
            })
            .collect()
    });
    let slots = fwd.slot.as_ref().map(|trace| {
        let binary = g.value(trace.binary_logits);
        trace
            .attention
            .iter()
            .enumerate()
            .map(|(s, &a)| {
                let alpha = g.value(a);
                SlotExplanation {
                    name: maps.slot_classes.name(s).to_string(),
                    alpha: (0..l).map(|r| alpha.row(r).iter().map(|v| v.as_f64()).collect()).collect(),
                    binary_probs: (0..l).map(|t| sigmoid(binary.at(t, s).as_f64())).collect(),
                }
            })
            .collect()
    });
    let prediction = PredictionLabels {
        intent: fwd
            .intent_logits
            .map(|v| maps.intents.name(argmax(g.value(v).row(0))).to_string()),
        tags: fwd.slot_logits.map(|v| {
            (0..l)
                .map(|t| maps.bio.name(argmax(g.value(v).row(t))).to_string())
                .collect()
        }),
    };
    Ok(ExplanationBundle {
        schema_version: SCHEMA_VERSION,
        tokens: tokens.to_vec(),
        intents,
        slots,
        prediction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExplainFormat {
    Json,
    Svg,
    Ansi,
}

impl ExplainFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ExplainFormat::Json => "json",
            ExplainFormat::Svg => "svg",
            ExplainFormat::Ansi => "txt",
        }
    }
}

impl FromStr for ExplainFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ExplainFormat::Json),
            "svg" => Ok(ExplainFormat::Svg),
            "ansi" => Ok(ExplainFormat::Ansi),
            other => Err(Error::Usage(format!("unknown format '{other}' (valid formats: json, svg, ansi)"))),
        }
    }
}

pub fn render(bundle: &ExplanationBundle, format: ExplainFormat) -> Result<String> {
    match format {
        ExplainFormat::Json => Ok(serde_json::to_string_pretty(bundle)? + "\n"),
        ExplainFormat::Svg => Ok(render_svg(bundle)),
        ExplainFormat::Ansi => Ok(render_ansi(bundle)),
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

const CELL: usize = 22;
const LABEL_W: usize = 110;
const CAPTION_H: usize = 20;
const GAP: usize = 24;

/// One `<g class="heatmap">` per class: a token strip for intents, an
/// `l × l` grid for slots. Cell opacity is the attention weight.
pub fn render_svg(bundle: &ExplanationBundle) -> String {
    let l = bundle.tokens.len();
    let mut body = String::new();
    let mut y = GAP / 2;
    let width = LABEL_W + l * CELL + GAP;
    for c in bundle.intents.iter().flatten() {
        let _ = writeln!(
            body,
            r#"<g class="heatmap" data-kind="intent" data-class="{name}" transform="translate(0,{y})">"#,
            name = escape(&c.name)
        );
        let _ = writeln!(
            body,
            r#"<text x="4" y="14" font-weight="bold">intent: {} (p={:.3})</text>"#,
            escape(&c.name),
            c.binary_prob
        );
        for (t, (&w, tok)) in c.alpha.iter().zip(&bundle.tokens).enumerate() {
            let x = LABEL_W + t * CELL;
            let _ = writeln!(
                body,
                r##"<rect x="{x}" y="{CAPTION_H}" width="{CELL}" height="{CELL}" fill="#c0392b" fill-opacity="{w:.4}" stroke="#999"><title>{} {w:.4}</title></rect>"##,
                escape(tok)
            );
        }
        token_labels(&mut body, &bundle.tokens, CAPTION_H + CELL + 12);
        body.push_str("</g>\n");
        y += CAPTION_H + CELL + 20 + GAP;
    }
    for c in bundle.slots.iter().flatten() {
        let _ = writeln!(
            body,
            r#"<g class="heatmap" data-kind="slot" data-class="{name}" transform="translate(0,{y})">"#,
            name = escape(&c.name)
        );
        let _ = writeln!(
            body,
            r#"<text x="4" y="14" font-weight="bold">slot: {}</text>"#,
            escape(&c.name)
        );
        for (r, row) in c.alpha.iter().enumerate() {
            let ry = CAPTION_H + r * CELL;
            let _ = writeln!(
                body,
                r#"<text x="4" y="{}" font-size="11">{} ({:.2})</text>"#,
                ry + 15,
                escape(&bundle.tokens[r]),
                c.binary_probs[r]
            );
            for (col, &w) in row.iter().enumerate() {
                let _ = writeln!(
                    body,
                    r##"<rect x="{}" y="{ry}" width="{CELL}" height="{CELL}" fill="#2471a3" fill-opacity="{w:.4}" stroke="#999"/>"##,
                    LABEL_W + col * CELL
                );
            }
        }
        token_labels(&mut body, &bundle.tokens, CAPTION_H + l * CELL + 12);
        body.push_str("</g>\n");
        y += CAPTION_H + l * CELL + 20 + GAP;
    }
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{y}\" font-family=\"monospace\" font-size=\"12\">\n{body}</svg>\n"
    )
}

fn token_labels(out: &mut String, tokens: &[String], y: usize) {
    for (t, tok) in tokens.iter().enumerate() {
        let x = LABEL_W + t * CELL + CELL / 2;
        let _ = writeln!(
            out,
            r#"<text x="{x}" y="{y}" font-size="10" text-anchor="end" transform="rotate(-45 {x} {y})">{}</text>"#,
            escape(tok)
        );
    }
}

/// Shaded token strips: one line per class, background intensity by weight.
/// Slot classes are shown as the attention each token receives, averaged over rows.
pub fn render_ansi(bundle: &ExplanationBundle) -> String {
    let shade = |w: f64, max: f64| {
        let level = if max > 0.0 { (w / max * 23.0).round() as u8 } else { 0 };
        232 + level.min(23)
    };
    let strip = |weights: &[f64]| {
        let max = weights.iter().copied().fold(0.0, f64::max);
        let mut line = String::new();
        for (w, tok) in weights.iter().zip(&bundle.tokens) {
            let bg = shade(*w, max);
            let fg = if bg > 243 { 16 } else { 255 };
            let _ = write!(line, "\x1b[48;5;{bg}m\x1b[38;5;{fg}m {tok} \x1b[0m");
        }
        line
    };
    let mut out = String::new();
    let width = bundle
        .intents
        .iter()
        .flatten()
        .map(|c| c.name.len())
        .chain(bundle.slots.iter().flatten().map(|c| c.name.len()))
        .max()
        .unwrap_or(0);
    if let Some(intent) = &bundle.prediction.intent {
        let _ = writeln!(out, "predicted intent: {intent}");
    }
    if let Some(tags) = &bundle.prediction.tags {
        let _ = writeln!(out, "predicted tags:   {}", tags.join(" "));
    }
    for c in bundle.intents.iter().flatten() {
        let _ = writeln!(out, "intent {:<width$} p={:.3}  {}", c.name, c.binary_prob, strip(&c.alpha));
    }
    for c in bundle.slots.iter().flatten() {
        let l = c.alpha.len().max(1) as f64;
        let received: Vec<f64> = (0..bundle.tokens.len())
            .map(|col| c.alpha.iter().map(|row| row[col]).sum::<f64>() / l)
            .collect();
        let best = c.binary_probs.iter().copied().fold(0.0, f64::max);
        let _ = writeln!(out, "slot   {:<width$} p={:.3}  {}", c.name, best, strip(&received));
    }
    out
}

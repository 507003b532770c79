//! CSV and SVG writers. Every number goes through [`crate::fmt::num`].

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::rollout::CurveRow;
use crate::error::{DpiError, Result};
use crate::fmt::{join, num};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run: String,
    /// A seed number, or `all` for pooled rows.
    pub seed: String,
    pub metric: String,
    pub k: Option<usize>,
    pub mean: f64,
    pub ci: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub regime: String,
    pub x: f64,
    pub y: f64,
    pub omega: Vec<f64>,
    pub dominated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRow {
    pub t: usize,
    pub align: f64,
    pub event: bool,
}

fn finish<W: Write>(mut out: W, text: String) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| DpiError::io(Path::new("<output>"), e))
}

pub fn write_metrics<W: Write>(out: W, rows: &[MetricRow]) -> Result<()> {
    let mut s = String::from("run,seed,metric,K,mean,ci\n");
    for r in rows {
        let k = r.k.map(|k| k.to_string()).unwrap_or_default();
        s += &format!(
            "{},{},{},{},{},{}\n",
            r.run,
            r.seed,
            r.metric,
            k,
            num(r.mean),
            num(r.ci)
        );
    }
    finish(out, s)
}

pub fn write_curve<W: Write>(out: W, rows: &[CurveRow]) -> Result<()> {
    let mut s = String::from("step,MER,MER_ci,SR,SR_ci\n");
    for r in rows {
        s += &format!(
            "{},{},{},{},{}\n",
            r.step,
            num(r.mer),
            num(r.mer_ci),
            num(r.sr),
            num(r.sr_ci)
        );
    }
    finish(out, s)
}

/// `omega` is written as a `;`-separated list.
pub fn write_pareto<W: Write>(out: W, rows: &[ParetoRow]) -> Result<()> {
    let mut s = String::from("regime,x,y,omega,dominated\n");
    for r in rows {
        s += &format!(
            "{},{},{},{},{}\n",
            r.regime,
            num(r.x),
            num(r.y),
            join(&r.omega, ";"),
            r.dominated
        );
    }
    finish(out, s)
}

pub fn write_alignment<W: Write>(out: W, rows: &[AlignmentRow]) -> Result<()> {
    let mut s = String::from("t,align,event\n");
    for r in rows {
        s += &format!("{},{},{}\n", r.t, num(r.align), r.event);
    }
    finish(out, s)
}

/// Minimal line chart; one polyline per series.
pub fn svg_line_chart(title: &str, x_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 50.0;
    const COLORS: [&str; 6] = [
        "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
    ];
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\">\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\">{title}</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>\n\
         <line x1=\"{PAD}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"5\" y=\"{}\">{}</text>\n<text x=\"5\" y=\"{}\">{}</text>\n",
        W / 2.0,
        W / 2.0,
        H - 10.0,
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD,
        PAD,
        num(y1),
        H - PAD,
        num(y0),
    );
    for (i, (name, p)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = p
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        s += &format!(
            "<polyline fill=\"none\" stroke=\"{color}\" points=\"{}\"/>\n\
             <text x=\"{}\" y=\"{}\" fill=\"{color}\">{name}</text>\n",
            coords.join(" "),
            W - PAD - 100.0,
            PAD + 15.0 * i as f64,
        );
    }
    s += "</svg>\n";
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_layout() {
        let rows = vec![MetricRow {
            run: "dpi".into(),
            seed: "all".into(),
            metric: "psk".into(),
            k: Some(3),
            mean: 1.0 / 3.0,
            ci: 0.0,
        }];
        let mut buf = Vec::new();
        write_metrics(&mut buf, &rows).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "run,seed,metric,K,mean,ci\ndpi,all,psk,3,0.333333333,0\n"
        );
    }

    #[test]
    fn pareto_layout() {
        let rows = vec![ParetoRow {
            regime: "pre".into(),
            x: 2.5,
            y: -1.0,
            omega: vec![0.5, 0.5, 0.0, 0.0, 0.0],
            dominated: false,
        }];
        let mut buf = Vec::new();
        write_pareto(&mut buf, &rows).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "regime,x,y,omega,dominated\npre,2.5,-1,0.5;0.5;0;0;0,false\n"
        );
    }

    #[test]
    fn svg_has_one_polyline_per_series() {
        let s = svg_line_chart(
            "SR",
            "steps",
            &[
                ("a".into(), vec![(0.0, 0.1), (1.0, 0.5)]),
                ("b".into(), vec![(0.0, 0.2)]),
            ],
        );
        assert_eq!(s.matches("<polyline").count(), 2);
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
    }
}

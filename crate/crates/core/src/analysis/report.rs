//! CSV emitters and static SVG charts.

use std::io::{Read, Write};

use super::alignment::AlignmentProfile;
use super::outliers::ActivationStats;
use crate::error::{Error, Result};

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// `layer,modality,density,channel,frequency`, one row per channel.
pub fn write_outliers_csv<W: Write>(out: W, stats: &[ActivationStats]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["layer", "modality", "density", "channel", "frequency"]).map_err(csv_err)?;
    for s in stats {
        let layer = s.layer.map_or_else(String::new, |l| l.to_string());
        let modality = s.modality.map_or("", |m| m.as_str());
        let density = s.density.to_string();
        for (c, f) in s.channel_frequency.iter().enumerate() {
            w.write_record([layer.as_str(), modality, &density, &c.to_string(), &f.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `block,mean_cosine`.
pub fn write_alignment_csv<W: Write>(out: W, profile: &AlignmentProfile) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["block", "mean_cosine"]).map_err(csv_err)?;
    for (b, c) in profile.blocks.iter().enumerate() {
        w.write_record([b.to_string(), c.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub arm: String,
    /// Mean multimodal training loss since the previous record.
    pub train_loss: f64,
    pub eval_accuracy: f64,
    pub lm_perplexity: f64,
}

pub const METRICS_HEADER: [&str; 5] = ["step", "arm", "train_loss", "eval_accuracy", "lm_perplexity"];

pub fn write_metrics_csv<W: Write>(out: W, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.step.to_string(),
            r.arm.clone(),
            r.train_loss.to_string(),
            r.eval_accuracy.to_string(),
            r.lm_perplexity.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(Error::Format(format!("unexpected metrics header {:?}", header)));
    }
    let num = |s: &str, what: &str| -> Result<f64> {
        s.parse().map_err(|_| Error::Format(format!("bad {what} value {s:?}")))
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        out.push(MetricsRecord {
            step: rec[0].parse().map_err(|_| Error::Format(format!("bad step {:?}", &rec[0])))?,
            arm: rec[1].to_string(),
            train_loss: num(&rec[2], "train_loss")?,
            eval_accuracy: num(&rec[3], "eval_accuracy")?,
            lm_perplexity: num(&rec[4], "lm_perplexity")?,
        });
    }
    Ok(out)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn frame(out: &mut String, title: &str, x_label: &str, y_label: &str, y: (f64, f64)) {
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    out.push_str(&format!("<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"));
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        W / 2.0,
        escape(title)
    ));
    let (x0, x1, y0, y1) = (MARGIN, W - MARGIN / 2.0, H - MARGIN, MARGIN / 2.0 + 10.0);
    out.push_str(&format!(
        "<path d=\"M{x0:.1} {y1:.1} L{x0:.1} {y0:.1} L{x1:.1} {y0:.1}\" stroke=\"black\" fill=\"none\"/>\n"
    ));
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
        (x0 + x1) / 2.0,
        H - 16.0,
        escape(x_label)
    ));
    out.push_str(&format!(
        "<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">{}</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    ));
    for (v, py) in [(y.0, y0), (y.1, y1)] {
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
            x0 - 4.0,
            py + 4.0,
            fmt_tick(v)
        ));
    }
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.trunc() {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn legend(out: &mut String, names: &[&str]) {
    for (i, n) in names.iter().enumerate() {
        let y = MARGIN / 2.0 + 14.0 + 16.0 * i as f64;
        let x = W - MARGIN / 2.0 - 150.0;
        out.push_str(&format!(
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"12\" height=\"3\" fill=\"{}\"/><text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n",
            y - 4.0,
            PALETTE[i % PALETTE.len()],
            x + 16.0,
            y,
            escape(n)
        ));
    }
}

/// Named series of (x, y) points drawn as polylines.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    let xs = bounds(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)));
    let ys = bounds(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)));
    let mut out = String::new();
    frame(&mut out, title, x_label, y_label, ys);
    let (x0, x1, y0, y1) = (MARGIN, W - MARGIN / 2.0, H - MARGIN, MARGIN / 2.0 + 10.0);
    out.push_str(&format!(
        "<text x=\"{x0:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text><text x=\"{x1:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
        y0 + 16.0,
        fmt_tick(xs.0),
        y0 + 16.0,
        fmt_tick(xs.1)
    ));
    for (i, (_, pts)) in series.iter().enumerate() {
        let coords: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| {
                let px = x0 + (x - xs.0) / (xs.1 - xs.0) * (x1 - x0);
                let py = y0 - (y - ys.0) / (ys.1 - ys.0) * (y0 - y1);
                format!("{px:.1},{py:.1}")
            })
            .collect();
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            coords.join(" "),
            PALETTE[i % PALETTE.len()]
        ));
    }
    let names: Vec<&str> = series.iter().map(|(n, _)| *n).collect();
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}

/// One bar per (label, value); bars start at zero or the minimum, whichever is lower.
pub fn bar_chart(title: &str, x_label: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let (lo, hi) = bounds(bars.iter().map(|b| b.1).chain([0.0]));
    let mut out = String::new();
    frame(&mut out, title, x_label, y_label, (lo, hi));
    let (x0, x1, y0, y1) = (MARGIN, W - MARGIN / 2.0, H - MARGIN, MARGIN / 2.0 + 10.0);
    let n = bars.len().max(1) as f64;
    let slot = (x1 - x0) / n;
    let to_y = |v: f64| y0 - (v - lo) / (hi - lo) * (y0 - y1);
    for (i, (label, v)) in bars.iter().enumerate() {
        let (top, bottom) = (to_y(v.max(0.0)), to_y(v.min(0.0)));
        let x = x0 + slot * i as f64 + slot * 0.15;
        out.push_str(&format!(
            "<rect x=\"{x:.1}\" y=\"{top:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{}\"/>\n",
            slot * 0.7,
            (bottom - top).max(0.0),
            PALETTE[i % PALETTE.len()]
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            x + slot * 0.35,
            y0 + 16.0,
            escape(label)
        ));
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Modality;

    #[test]
    fn metrics_roundtrip() {
        let recs = vec![
            MetricsRecord { step: 0, arm: "warmup".into(), train_loss: f64::NAN, eval_accuracy: 0.0, lm_perplexity: 1.75 },
            MetricsRecord { step: 100, arm: "warmup".into(), train_loss: 0.1 + 0.2, eval_accuracy: 0.5, lm_perplexity: 1.7 },
        ];
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("step,arm,train_loss,eval_accuracy,lm_perplexity\n"));
        let back = read_metrics_csv(&buf[..]).unwrap();
        assert_eq!(back[1], recs[1]);
        assert!(back[0].train_loss.is_nan());
    }

    #[test]
    fn outlier_rows_per_channel() {
        let s = ActivationStats {
            layer: Some(0),
            modality: Some(Modality::Multimodal),
            kappa: 10.0,
            threshold: 1.0,
            density: 0.25,
            channel_frequency: vec![0.0, 1.0],
        };
        let mut buf = Vec::new();
        write_outliers_csv(&mut buf, &[s]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "layer,modality,density,channel,frequency\n0,multimodal,0.25,0,0\n0,multimodal,0.25,1,1\n"
        );
    }

    #[test]
    fn alignment_rows() {
        let mut buf = Vec::new();
        write_alignment_csv(&mut buf, &AlignmentProfile { blocks: vec![0.5, -0.25] }).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "block,mean_cosine\n0,0.5\n1,-0.25\n");
    }

    #[test]
    fn charts_are_well_formed() {
        let svg = line_chart("loss", "step", "nats", &[("a", vec![(0.0, 1.0), (1.0, 0.5)]), ("b<", vec![])]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("b&lt;"));
        let svg = bar_chart("density", "layer", "fraction", &[("0/mm".into(), 0.1), ("0/text".into(), 0.0)]);
        assert_eq!(svg.matches("<rect").count(), 3);
    }
}

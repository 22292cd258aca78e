//! CSV and SVG output for embeddings.

use std::collections::BTreeMap;
use std::io::Write;

use super::Embedding;
use crate::error::Result;
use crate::geometry::RowKind;
use crate::scalar::Scalar;

const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];
const SIZE: f64 = 1000.0;
const MARGIN: f64 = 50.0;

/// Writes `id,kind,label,x,y` (further coordinates as `x2,x3,...`).
pub fn write_embedding_csv<T: Scalar, W: Write>(emb: &Embedding<T>, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["id".to_string(), "kind".into(), "label".into()];
    for k in 0..emb.dim {
        header.push(match k {
            0 => "x".into(),
            1 => "y".into(),
            _ => format!("x{k}"),
        });
    }
    out.write_record(&header)?;
    for (i, id) in emb.row_ids.iter().enumerate() {
        let mut rec = vec![id.index.to_string(), id.kind.to_string(), id.label.clone()];
        rec.extend(emb.point(i).iter().map(|v| format!("{:e}", v.as_f64())));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

fn color(labels: &[&str], label: &str) -> String {
    let k = labels.iter().position(|l| *l == label).unwrap_or(0);
    if k < PALETTE.len() {
        PALETTE[k].to_string()
    } else {
        format!("hsl({},60%,45%)", (k * 47) % 360)
    }
}

fn star(cx: f64, cy: f64, r: f64) -> String {
    (0..10)
        .map(|k| {
            let radius = if k % 2 == 0 { r } else { r * 0.45 };
            let a = std::f64::consts::PI * (k as f64 / 5.0 - 0.5);
            format!("{:.2},{:.2}", cx + radius * a.cos(), cy + radius * a.sin())
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Scatter plot of the first two coordinates. Samples are dots, prototypes
/// are stars joined to their class's sample centroid by a dashed line.
pub fn write_embedding_svg<T: Scalar, W: Write>(emb: &Embedding<T>, mut w: W) -> Result<()> {
    let xy: Vec<(f64, f64)> = (0..emb.len())
        .map(|i| {
            let p = emb.point(i);
            (p.first().map_or(0.0, |v| v.as_f64()), p.get(1).map_or(0.0, |v| v.as_f64()))
        })
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &xy {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-12);
    let map = |(x, y): (f64, f64)| {
        let s = (SIZE - 2.0 * MARGIN) / span;
        (MARGIN + (x - x0) * s, SIZE - MARGIN - (y - y0) * s)
    };
    let mut labels: Vec<&str> = emb.row_ids.iter().map(|r| r.label.as_str()).collect();
    labels.sort_unstable();
    labels.dedup();

    let mut centroids: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    for (id, &p) in emb.row_ids.iter().zip(&xy) {
        if id.kind == RowKind::Sample {
            let e = centroids.entry(id.label.as_str()).or_insert((0.0, 0.0, 0));
            e.0 += p.0;
            e.1 += p.1;
            e.2 += 1;
        }
    }

    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    )?;
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
    for (id, &p) in emb.row_ids.iter().zip(&xy) {
        if id.kind != RowKind::Sample {
            continue;
        }
        let (cx, cy) = map(p);
        writeln!(
            w,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="4" fill="{}" fill-opacity="0.7"/>"#,
            color(&labels, &id.label)
        )?;
    }
    for (id, &p) in emb.row_ids.iter().zip(&xy) {
        if id.kind != RowKind::Prototype {
            continue;
        }
        let (cx, cy) = map(p);
        let c = color(&labels, &id.label);
        if let Some(&(sx, sy, n)) = centroids.get(id.label.as_str()) {
            let (mx, my) = map((sx / n as f64, sy / n as f64));
            writeln!(
                w,
                r#"<line x1="{cx:.2}" y1="{cy:.2}" x2="{mx:.2}" y2="{my:.2}" stroke="{c}" stroke-width="1.5" stroke-dasharray="6,4"/>"#
            )?;
        }
        writeln!(w, r#"<polygon points="{}" fill="{c}" stroke="black" stroke-width="1"/>"#, star(cx, cy, 12.0))?;
    }
    for (k, label) in labels.iter().enumerate() {
        let y = 20.0 + 18.0 * k as f64;
        writeln!(w, r#"<circle cx="20" cy="{y:.2}" r="5" fill="{}"/>"#, color(&labels, label))?;
        writeln!(
            w,
            r#"<text x="32" y="{:.2}" font-family="sans-serif" font-size="13">{}</text>"#,
            y + 4.0,
            escape(label)
        )?;
    }
    writeln!(w, "</svg>")?;
    Ok(())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RowId;

    fn toy() -> Embedding<f64> {
        Embedding {
            points: vec![0.0, 0.0, 1.0, 1.0, 0.5, 0.5],
            dim: 2,
            row_ids: vec![RowId::sample(0, "a"), RowId::sample(1, "a"), RowId::prototype(0, "a")],
            kl_history: vec![],
        }
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_embedding_csv(&toy(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "id,kind,label,x,y");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("0,prototype,a,"));
    }

    #[test]
    fn svg_has_star_and_dashed_line() {
        let mut buf = Vec::new();
        write_embedding_svg(&toy(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.matches("<polygon").count(), 1);
        assert_eq!(text.matches("stroke-dasharray").count(), 1);
        assert!(text.contains(r#"viewBox="0 0 1000 1000""#));
    }
}

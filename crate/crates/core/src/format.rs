//! Number formatting shared by every emitted table.

/// Fixed four-decimal rendering. Exact binary ties round half to even.
pub fn prob4(v: f64) -> String {
    // std's float formatting works on the exact binary value and breaks exact
    // ties towards the even digit.
    let s = format!("{v:.4}");
    if s == "-0.0000" {
        "0.0000".to_string()
    } else {
        s
    }
}

/// Escape-free CSV line from already formatted fields.
pub(crate) fn csv_line(fields: &[String]) -> String {
    let mut s = fields.join(",");
    s.push('\n');
    s
}

pub(crate) fn markdown_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str(&format!("| {} |\n", header.join(" | ")));
    out.push_str(&format!(
        "|{}\n",
        header.iter().map(|_| "---:|").collect::<String>()
    ));
    for r in rows {
        out.push_str(&format!("| {} |\n", r.join(" | ")));
    }
    out
}

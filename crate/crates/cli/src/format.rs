use wf_levy::Environment;

/// Nine significant digits: fixed notation for decimal exponents in
/// `[-5, 9)`, scientific otherwise.
pub fn num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.8e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..]
        .parse()
        .expect("integer exponent");
    if (-5..9).contains(&exp) {
        format!("{:.*}", (8 - exp) as usize, v)
    } else {
        sci
    }
}

/// `# params: sigma=<s> atoms=<z:w>,<z:w>` (atoms `none` when empty).
pub fn params_line(env: &Environment) -> String {
    let atoms = if env.atoms().is_empty() {
        "none".to_string()
    } else {
        env.atoms()
            .iter()
            .map(|a| format!("{}:{}", a.z, a.w))
            .collect::<Vec<_>>()
            .join(",")
    };
    format!("# params: sigma={} atoms={atoms}", env.sigma())
}

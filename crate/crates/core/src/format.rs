/// Formats a float with 10 significant digits, `%.10g` style: plain decimal
/// for moderate exponents, scientific otherwise, trailing zeros trimmed.
pub fn sig10(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    // rounding can carry into the next decade (9.9999999999 -> 10.00000000)
    let sci = format!("{:.9e}", v);
    let exp = sci
        .rsplit_once('e')
        .and_then(|(_, e)| e.parse::<i32>().ok())
        .unwrap_or(exp);
    if (-5..10).contains(&exp) {
        let decimals = (9 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, v))
    } else {
        let (mantissa, e) = sci.split_once('e').unwrap();
        format!("{}e{}", trim_zeros(mantissa.to_string()), e)
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        let t = s.trim_end_matches('0').trim_end_matches('.');
        if t == "-0" {
            "0".into()
        } else {
            t.to_string()
        }
    } else {
        s
    }
}

/// Serialises `value` to JSON with every float cut to 10 significant digits.
pub fn to_json_sig10<T: serde::Serialize>(value: &T) -> serde_json::Result<serde_json::Value> {
    let mut v = serde_json::to_value(value)?;
    round_floats(&mut v);
    Ok(v)
}

fn round_floats(v: &mut serde_json::Value) {
    use serde_json::Value;
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            let r: f64 = sig10(x).parse().expect("sig10 output parses");
            if let Some(num) = serde_json::Number::from_f64(r) {
                *n = num;
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_floats),
        Value::Object(o) => o.values_mut().for_each(round_floats),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::{sig10, to_json_sig10};

    #[test]
    fn json_floats_are_cut() {
        let v = to_json_sig10(&(1.0f64 / 3.0, vec![2.0f64.sqrt()], 7u32)).unwrap();
        assert_eq!(v.to_string(), "[0.3333333333,[1.414213562],7]");
    }

    #[test]
    fn ten_significant_digits() {
        assert_eq!(sig10(0.0), "0");
        assert_eq!(sig10(1.0), "1");
        assert_eq!(sig10(-2.5), "-2.5");
        assert_eq!(sig10(1.0 / 3.0), "0.3333333333");
        assert_eq!(sig10(12345.678901234), "12345.6789");
        assert_eq!(sig10(1e-7), "1e-7");
        assert_eq!(sig10(6.02214076e23), "6.02214076e23");
        assert_eq!(sig10(9.99999999999), "10");
        assert_eq!(sig10(0.05), "0.05");
    }

    #[test]
    fn round_trips_to_ten_digits() {
        for v in [std::f64::consts::PI, -1.234567890123e-12, 98765.4321e8, 0.1 + 0.2] {
            let back: f64 = sig10(v).parse().unwrap();
            assert!(((back - v) / v).abs() < 1e-9, "{v} -> {}", sig10(v));
        }
    }
}

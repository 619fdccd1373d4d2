//! JSON tableau files.

use nalgebra::{DMatrix, DVector};
use serde_json::{Map, Value};

use super::rational::{format_rational, parse_rational, to_f64, ExactTableau, RMat, Rational};
use super::{GlmTableau, ImexGlmPair, SplitMode};
use crate::error::{GlmError, Result};

const KNOWN_FIELDS: &[&str] = &[
    "name",
    "mode",
    "rational",
    "s",
    "r",
    "p",
    "q_explicit",
    "q_implicit",
    "c",
    "c_explicit",
    "c_implicit",
    "A_explicit",
    "A_implicit",
    "U",
    "U_explicit",
    "U_implicit",
    "B_explicit",
    "B_implicit",
    "V",
    "V_explicit",
    "V_implicit",
    "W_explicit",
    "W_implicit",
];

/// Matrix entries in both representations; `exact` is filled in rational mode.
struct Entries {
    float: DMatrix<f64>,
    exact: Option<RMat>,
}

struct Reader<'a> {
    obj: &'a Map<String, Value>,
    rational: bool,
}

impl Reader<'_> {
    fn get(&self, field: &str) -> Result<&Value> {
        self.obj
            .get(field)
            .ok_or_else(|| GlmError::schema(field, "required field is missing"))
    }

    fn count(&self, field: &str) -> Result<usize> {
        self.get(field)?
            .as_u64()
            .map(|x| x as usize)
            .ok_or_else(|| GlmError::schema(field, "expected a non-negative integer"))
    }

    fn scalar(&self, field: &str, v: &Value) -> Result<(f64, Option<Rational>)> {
        if self.rational {
            let text = match v {
                Value::String(s) => s.clone(),
                Value::Number(n) => n.to_string(),
                _ => return Err(GlmError::schema(field, "expected a \"num/den\" string")),
            };
            let q = parse_rational(&text)
                .ok_or_else(|| GlmError::schema(field, format!("cannot parse `{text}` as a rational")))?;
            Ok((to_f64(&q), Some(q)))
        } else {
            let x = v
                .as_f64()
                .ok_or_else(|| GlmError::schema(field, "expected a number"))?;
            if !x.is_finite() {
                return Err(GlmError::NonFinite { field: field.into() });
            }
            Ok((x, None))
        }
    }

    fn vector(&self, field: &str, len: usize) -> Result<(DVector<f64>, Option<Vec<Rational>>)> {
        let arr = self
            .get(field)?
            .as_array()
            .ok_or_else(|| GlmError::schema(field, "expected an array"))?;
        if arr.len() != len {
            return Err(GlmError::Dimension {
                field: field.into(),
                expected: format!("length {len}"),
                found: format!("length {}", arr.len()),
            });
        }
        let mut float = DVector::zeros(len);
        let mut exact = Vec::new();
        for (i, v) in arr.iter().enumerate() {
            let (x, q) = self.scalar(field, v)?;
            float[i] = x;
            exact.extend(q);
        }
        Ok((float, self.rational.then_some(exact)))
    }

    fn matrix(&self, field: &str, rows: usize, cols: usize) -> Result<Entries> {
        let arr = self
            .get(field)?
            .as_array()
            .ok_or_else(|| GlmError::schema(field, "expected an array of rows"))?;
        let dim_err = |found: String| GlmError::Dimension {
            field: field.into(),
            expected: format!("{rows}x{cols}"),
            found,
        };
        if arr.len() != rows {
            return Err(dim_err(format!("{} rows", arr.len())));
        }
        let mut float = DMatrix::zeros(rows, cols);
        let mut exact: RMat = Vec::with_capacity(rows);
        for (i, row) in arr.iter().enumerate() {
            let row = row
                .as_array()
                .ok_or_else(|| GlmError::schema(field, format!("row {i} is not an array")))?;
            if row.len() != cols {
                return Err(dim_err(format!("{} columns in row {i}", row.len())));
            }
            let mut erow = Vec::with_capacity(cols);
            for (j, v) in row.iter().enumerate() {
                let (x, q) = self.scalar(field, v)?;
                float[(i, j)] = x;
                erow.extend(q);
            }
            exact.push(erow);
        }
        Ok(Entries {
            float,
            exact: self.rational.then_some(exact),
        })
    }

    /// A coefficient that is either shared (`U`) or split (`U_explicit`/`U_implicit`).
    fn shared_or_split(
        &self,
        base: &str,
        mode: SplitMode,
        rows: usize,
        cols: usize,
    ) -> Result<(Entries, Entries)> {
        let e_name = format!("{base}_explicit");
        let i_name = format!("{base}_implicit");
        let has_e = self.obj.contains_key(&e_name);
        let has_i = self.obj.contains_key(&i_name);
        if mode == SplitMode::Additive && (has_e || has_i) {
            let field = if has_e { e_name } else { i_name };
            return Err(GlmError::schema(field, "only allowed in component mode"));
        }
        if has_e != has_i {
            let missing = if has_e { i_name } else { e_name };
            return Err(GlmError::schema(missing, "split coefficients must be given in pairs"));
        }
        if has_e {
            if self.obj.contains_key(base) {
                return Err(GlmError::schema(base, "conflicts with the split form"));
            }
            Ok((self.matrix(&e_name, rows, cols)?, self.matrix(&i_name, rows, cols)?))
        } else {
            let m = self.matrix(base, rows, cols)?;
            let copy = Entries {
                float: m.float.clone(),
                exact: m.exact.clone(),
            };
            Ok((m, copy))
        }
    }

    fn abscissae(&self, s: usize) -> Result<[(DVector<f64>, Option<Vec<Rational>>); 2]> {
        let has_e = self.obj.contains_key("c_explicit");
        let has_i = self.obj.contains_key("c_implicit");
        let shared = if self.obj.contains_key("c") {
            Some(self.vector("c", s)?)
        } else {
            None
        };
        let pick = |present: bool, name: &str| -> Result<(DVector<f64>, Option<Vec<Rational>>)> {
            if present {
                self.vector(name, s)
            } else {
                shared
                    .clone()
                    .ok_or_else(|| GlmError::schema("c", "required field is missing"))
            }
        };
        Ok([pick(has_e, "c_explicit")?, pick(has_i, "c_implicit")?])
    }
}

/// Parses a tableau file into a structurally validated pair.
pub fn parse_tableau(text: &str) -> Result<ImexGlmPair> {
    let root: Value = serde_json::from_str(text)
        .map_err(|e| GlmError::schema("<document>", format!("invalid JSON: {e}")))?;
    let obj = root
        .as_object()
        .ok_or_else(|| GlmError::schema("<document>", "top level must be an object"))?;
    if let Some(unknown) = obj.keys().find(|k| !KNOWN_FIELDS.contains(&k.as_str())) {
        return Err(GlmError::schema(unknown.as_str(), "unknown field"));
    }
    let rational = match obj.get("rational") {
        None => false,
        Some(Value::Bool(b)) => *b,
        Some(_) => return Err(GlmError::schema("rational", "expected true or false")),
    };
    let rd = Reader { obj, rational };
    let name = rd
        .get("name")?
        .as_str()
        .ok_or_else(|| GlmError::schema("name", "expected a string"))?
        .to_string();
    let mode = match rd.get("mode")?.as_str() {
        Some("additive") => SplitMode::Additive,
        Some("component") => SplitMode::Component,
        _ => return Err(GlmError::schema("mode", "expected \"additive\" or \"component\"")),
    };
    let s = rd.count("s")?;
    let r = rd.count("r")?;
    let p = rd.count("p")?;
    if s == 0 {
        return Err(GlmError::schema("s", "must be positive"));
    }
    if r == 0 {
        return Err(GlmError::schema("r", "must be positive"));
    }
    if p == 0 {
        return Err(GlmError::schema("p", "must be positive"));
    }
    let q_e = rd.count("q_explicit")?;
    let q_i = rd.count("q_implicit")?;
    for (field, q) in [("q_explicit", q_e), ("q_implicit", q_i)] {
        if q > p {
            return Err(GlmError::schema(field, format!("stage order {q} exceeds p = {p}")));
        }
    }
    let [c_e, c_i] = rd.abscissae(s)?;
    let a_e = rd.matrix("A_explicit", s, s)?;
    let a_i = rd.matrix("A_implicit", s, s)?;
    let (u_e, u_i) = rd.shared_or_split("U", mode, s, r)?;
    let b_e = rd.matrix("B_explicit", r, s)?;
    let b_i = rd.matrix("B_implicit", r, s)?;
    let (v_e, v_i) = rd.shared_or_split("V", mode, r, r)?;
    let w_e = rd.matrix("W_explicit", r, p + 1)?;
    let w_i = rd.matrix("W_implicit", r, p + 1)?;

    let build = |q, c: (DVector<f64>, Option<Vec<Rational>>), a: Entries, u: Entries, b: Entries, v: Entries, w: Entries| {
        let exact = match (c.1, a.exact, u.exact, b.exact, v.exact, w.exact) {
            (Some(c), Some(a), Some(u), Some(b), Some(v), Some(w)) => Some(ExactTableau { c, a, u, b, v, w }),
            _ => None,
        };
        let mut t = GlmTableau::new(p, q, c.0, a.float, u.float, b.float, v.float, w.float)?;
        t.exact = exact;
        Ok::<_, GlmError>(t)
    };
    let explicit = build(q_e, c_e, a_e, u_e, b_e, v_e, w_e)?;
    let implicit = build(q_i, c_i, a_i, u_i, b_i, v_i, w_i)?;
    ImexGlmPair::new(name, mode, explicit, implicit)
}

fn float_matrix(m: &DMatrix<f64>) -> Value {
    Value::Array(
        m.row_iter()
            .map(|row| Value::Array(row.iter().map(|&x| Value::from(x)).collect()))
            .collect(),
    )
}

fn exact_matrix(m: &RMat) -> Value {
    Value::Array(
        m.iter()
            .map(|row| Value::Array(row.iter().map(|x| Value::from(format_rational(x))).collect()))
            .collect(),
    )
}

fn float_vector(v: &DVector<f64>) -> Value {
    Value::Array(v.iter().map(|&x| Value::from(x)).collect())
}

fn exact_vector(v: &[Rational]) -> Value {
    Value::Array(v.iter().map(|x| Value::from(format_rational(x))).collect())
}

/// Writes a pair back to the file format. Floats use shortest round-trip
/// formatting and rational pairs keep their exact entries, so parsing the
/// output reproduces every coefficient bit for bit.
pub fn serialize_tableau(pair: &ImexGlmPair) -> String {
    let (e, i) = (&pair.explicit, &pair.implicit);
    let exact = match (&e.exact, &i.exact) {
        (Some(xe), Some(xi)) => Some((xe, xi)),
        _ => None,
    };
    let mut obj = Map::new();
    obj.insert("name".into(), Value::from(pair.name.clone()));
    obj.insert("mode".into(), Value::from(pair.mode.as_str()));
    if exact.is_some() {
        obj.insert("rational".into(), Value::Bool(true));
    }
    obj.insert("s".into(), Value::from(pair.s()));
    obj.insert("r".into(), Value::from(pair.r()));
    obj.insert("p".into(), Value::from(pair.p()));
    obj.insert("q_explicit".into(), Value::from(e.q));
    obj.insert("q_implicit".into(), Value::from(i.q));

    let vec_of = |t: &GlmTableau, x: Option<&ExactTableau>| match x {
        Some(x) => exact_vector(&x.c),
        None => float_vector(&t.c),
    };
    let mat_of = |m: &DMatrix<f64>, x: Option<&RMat>| match x {
        Some(x) => exact_matrix(x),
        None => float_matrix(m),
    };
    let xe = exact.map(|x| x.0);
    let xi = exact.map(|x| x.1);

    if e.c == i.c {
        obj.insert("c".into(), vec_of(e, xe));
    } else {
        obj.insert("c_explicit".into(), vec_of(e, xe));
        obj.insert("c_implicit".into(), vec_of(i, xi));
    }
    obj.insert("A_explicit".into(), mat_of(&e.a, xe.map(|x| &x.a)));
    obj.insert("A_implicit".into(), mat_of(&i.a, xi.map(|x| &x.a)));
    if e.u == i.u {
        obj.insert("U".into(), mat_of(&e.u, xe.map(|x| &x.u)));
    } else {
        obj.insert("U_explicit".into(), mat_of(&e.u, xe.map(|x| &x.u)));
        obj.insert("U_implicit".into(), mat_of(&i.u, xi.map(|x| &x.u)));
    }
    obj.insert("B_explicit".into(), mat_of(&e.b, xe.map(|x| &x.b)));
    obj.insert("B_implicit".into(), mat_of(&i.b, xi.map(|x| &x.b)));
    if e.v == i.v {
        obj.insert("V".into(), mat_of(&e.v, xe.map(|x| &x.v)));
    } else {
        obj.insert("V_explicit".into(), mat_of(&e.v, xe.map(|x| &x.v)));
        obj.insert("V_implicit".into(), mat_of(&i.v, xi.map(|x| &x.v)));
    }
    obj.insert("W_explicit".into(), mat_of(&e.w, xe.map(|x| &x.w)));
    obj.insert("W_implicit".into(), mat_of(&i.w, xi.map(|x| &x.w)));
    let mut text = serde_json::to_string_pretty(&Value::Object(obj)).expect("JSON values always serialize");
    text.push('\n');
    text
}

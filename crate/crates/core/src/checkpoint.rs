//! Plain-text checkpoint format.
//!
//! ```text
//! gradsurgeon-checkpoint 1
//! config {"lambda":0.2,...}
//! encoder student-base 2          # name, layer count
//! layer 32 32                     # rows cols, then one line of weights, one of biases
//! <row-major weights>
//! <bias>
//! encoder teacher-base 2
//! ...
//! adapter 6 32 6 0.8              # rank dim alpha dropout, then A (r x d) and B (d x r)
//! <A>
//! <B>
//! head img 32                     # name dim, then weights and bias
//! <w>
//! <b>
//! head text 32
//! head teacher 32
//! semantic identity | semantic embedded <offset>, followed by an encoder block
//! ```
//!
//! Numbers use the shortest representation that parses back to the same
//! `f64`, so write followed by read is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::encoders::{
    DenseLayer, FrozenHead, LinearHead, LowRankAdapter, MlpEncoder, SemanticMap, StudentEncoder, TeacherEncoder,
};
use crate::error::{Error, Result};
use crate::numerics::{Mat64, Vec64};
use crate::trainer::{Models, SurgeryConfig};

const MAGIC: &str = "gradsurgeon-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: SurgeryConfig,
    pub models: Models,
}

fn push_values(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{v:?}").unwrap();
    }
    out.push('\n');
}

fn push_encoder(out: &mut String, name: &str, enc: &MlpEncoder) {
    writeln!(out, "encoder {name} {}", enc.layers().len()).unwrap();
    for layer in enc.layers() {
        writeln!(out, "layer {} {}", layer.weight.rows(), layer.weight.cols()).unwrap();
        push_values(out, layer.weight.as_slice());
        push_values(out, &layer.bias);
    }
}

fn push_head(out: &mut String, name: &str, head: &LinearHead) {
    writeln!(out, "head {name} {}", head.dim()).unwrap();
    push_values(out, head.w().as_slice());
    push_values(out, &[head.b()]);
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let m = &self.models;
        let mut out = String::new();
        writeln!(out, "{MAGIC}").unwrap();
        writeln!(out, "config {}", serde_json::to_string(&self.config).expect("config serializes")).unwrap();
        push_encoder(&mut out, "student-base", m.student.base());
        push_encoder(&mut out, "teacher-base", m.teacher.base());
        let a = m.student.adapter();
        writeln!(out, "adapter {} {} {:?} {:?}", a.rank(), a.dim(), a.alpha(), a.dropout_rate()).unwrap();
        push_values(&mut out, a.a().as_slice());
        push_values(&mut out, a.b().as_slice());
        push_head(&mut out, "img", &m.head_img);
        push_head(&mut out, "text", &m.head_text);
        push_head(&mut out, "teacher", m.head_teacher.head());
        match &m.semantic {
            SemanticMap::Identity => out.push_str("semantic identity\n"),
            SemanticMap::Embedded { base, offset } => {
                writeln!(out, "semantic embedded {offset}").unwrap();
                push_encoder(&mut out, "semantic-base", base);
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut p = Parser {
            lines: text.lines().enumerate(),
        };
        let (line, magic) = p.next()?;
        if magic != MAGIC {
            return Err(Error::Parse {
                line,
                reason: format!("expected {MAGIC:?}"),
            });
        }
        let (line, cfg) = p.next()?;
        let json = cfg.strip_prefix("config ").ok_or_else(|| p.err(line, "expected config"))?;
        let config: SurgeryConfig = serde_json::from_str(json).map_err(|e| p.err(line, &e.to_string()))?;

        let student_base = p.encoder("student-base")?;
        let teacher_base = p.encoder("teacher-base")?;
        let (line, header) = p.next()?;
        let fields = p.header(line, header, "adapter", 4)?;
        let rank = p.int(line, fields[0])?;
        let dim = p.int(line, fields[1])?;
        let alpha = p.float(line, fields[2])?;
        let dropout = p.float(line, fields[3])?;
        let a = p.matrix(rank, dim)?;
        let b = p.matrix(dim, rank)?;
        let adapter = LowRankAdapter::new(a, b, alpha, dropout)?;

        let head_img = p.head("img")?;
        let head_text = p.head("text")?;
        let head_teacher = FrozenHead::new(p.head("teacher")?);
        let (line, sem) = p.next()?;
        let semantic = match sem.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["semantic", "identity"] => SemanticMap::Identity,
            ["semantic", "embedded", offset] => {
                let offset = p.int(line, offset)?;
                SemanticMap::Embedded {
                    base: p.encoder("semantic-base")?,
                    offset,
                }
            }
            _ => return Err(p.err(line, "expected semantic block")),
        };
        if let Some((line, extra)) = p.lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(p.err(line + 1, &format!("trailing content {extra:?}")));
        }
        Ok(Checkpoint {
            config,
            models: Models {
                student: StudentEncoder::new(student_base, adapter)?,
                teacher: TeacherEncoder::new(teacher_base),
                semantic,
                head_img,
                head_text,
                head_teacher,
            },
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

struct Parser<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Parser<'a> {
    fn err(&self, line: usize, reason: &str) -> Error {
        Error::Checkpoint(format!("line {line}: {reason}"))
    }

    fn next(&mut self) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))
    }

    fn int(&self, line: usize, s: &str) -> Result<usize> {
        s.parse().map_err(|_| self.err(line, &format!("bad integer {s:?}")))
    }

    fn float(&self, line: usize, s: &str) -> Result<f64> {
        s.parse().map_err(|_| self.err(line, &format!("bad number {s:?}")))
    }

    fn header(&self, line: usize, text: &'a str, tag: &str, n: usize) -> Result<Vec<&'a str>> {
        let mut parts = text.split_whitespace();
        if parts.next() != Some(tag) {
            return Err(self.err(line, &format!("expected {tag}")));
        }
        let rest: Vec<&str> = parts.collect();
        if rest.len() != n {
            return Err(self.err(line, &format!("{tag} header needs {n} fields")));
        }
        Ok(rest)
    }

    fn values(&mut self, n: usize) -> Result<Vec<f64>> {
        let (line, text) = self.next()?;
        let vals = text
            .split_whitespace()
            .map(|s| self.float(line, s))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != n {
            return Err(self.err(line, &format!("expected {n} values, found {}", vals.len())));
        }
        Ok(vals)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Mat64> {
        Mat64::new(rows, cols, self.values(rows * cols)?)
    }

    fn encoder(&mut self, name: &str) -> Result<MlpEncoder> {
        let (line, text) = self.next()?;
        let fields = self.header(line, text, "encoder", 2)?;
        if fields[0] != name {
            return Err(self.err(line, &format!("expected encoder {name}")));
        }
        let count = self.int(line, fields[1])?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let (line, text) = self.next()?;
            let f = self.header(line, text, "layer", 2)?;
            let (rows, cols) = (self.int(line, f[0])?, self.int(line, f[1])?);
            let weight = self.matrix(rows, cols)?;
            let bias = self.values(rows)?;
            layers.push(DenseLayer::new(weight, bias)?);
        }
        MlpEncoder::new(layers)
    }

    fn head(&mut self, name: &str) -> Result<LinearHead> {
        let (line, text) = self.next()?;
        let fields = self.header(line, text, "head", 2)?;
        if fields[0] != name {
            return Err(self.err(line, &format!("expected head {name}")));
        }
        let dim = self.int(line, fields[1])?;
        let w = Vec64::new(self.values(dim)?)?;
        let b = self.values(1)?[0];
        LinearHead::new(w, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn sample_models() -> Checkpoint {
        let mut rng = Rng::new(11);
        let base = MlpEncoder::random(&mut rng, &[5, 4]).unwrap();
        let config = SurgeryConfig {
            lr: 0.1,
            optimizer: crate::trainer::OptimizerKind::Sgd,
            ..Default::default()
        };
        let w = Vec64::new(vec![0.1, -1e-300, 3.0, f64::MIN_POSITIVE]).unwrap();
        let teacher = FrozenHead::new(LinearHead::new(w, -0.0).unwrap());
        let mut models = Models::init(
            base.clone(),
            SemanticMap::Embedded { base, offset: 1 },
            teacher,
            4,
            &config,
        )
        .unwrap();
        // Give B nonzero entries so both adapter blocks are exercised.
        let (_, b) = models.student.adapter_mut().params_mut();
        for (i, v) in b.iter_mut().enumerate() {
            *v = (i as f64 + 0.5) / 7.0;
        }
        Checkpoint { config, models }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample_models();
        let text = ck.to_text();
        let back = Checkpoint::from_text(&text).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_text(), text);
        assert_eq!(back.models.head_teacher.head().b().to_bits(), (-0.0f64).to_bits());

        let id = Checkpoint {
            models: Models {
                semantic: SemanticMap::Identity,
                ..ck.models.clone()
            },
            ..ck
        };
        assert_eq!(Checkpoint::from_text(&id.to_text()).unwrap(), id);
    }

    #[test]
    fn rejects_damage() {
        let text = sample_models().to_text();
        assert!(Checkpoint::from_text("").is_err());
        assert!(Checkpoint::from_text(&text.replacen("checkpoint 1", "checkpoint 9", 1)).is_err());
        let truncated: String = text.lines().take(8).map(|l| format!("{l}\n")).collect();
        assert!(Checkpoint::from_text(&truncated).is_err());
        assert!(Checkpoint::from_text(&format!("{text}junk\n")).is_err());
    }
}

//! Plain-text dump of a program for cross-checking with other solvers.
//!
//! ```text
//! vars <n>
//! var <j> <name> <quad> <lin>
//! const <c0>
//! eq <handle> <rhs> <nnz> <j>:<a> ...
//! cone <handle> <nonneg|soc> <dim>
//! row <const> <nnz> <j>:<a> ...
//! ```
//!
//! Objective is `Σ quadⱼ·xⱼ² + Σ linⱼ·xⱼ + c0`; each `cone` line is followed by
//! `dim` `row` lines giving the affine slack rows. Numbers use Rust's
//! shortest round-trip formatting.

use std::io::{self, Write};

use crate::expr::LinExpr;
use crate::program::{ConeKind, ConicProgram};

fn write_terms<W: Write>(w: &mut W, e: &LinExpr) -> io::Result<()> {
    let terms: Vec<_> = e.terms().collect();
    write!(w, " {}", terms.len())?;
    for (v, a) in terms {
        write!(w, " {}:{:?}", v.index(), a)?;
    }
    writeln!(w)
}

pub fn write_program<W: Write>(p: &ConicProgram, mut w: W) -> io::Result<()> {
    writeln!(w, "vars {}", p.num_vars())?;
    for (j, name) in p.var_names().iter().enumerate() {
        writeln!(
            w,
            "var {} {} {:?} {:?}",
            j,
            name,
            p.quadratic_costs()[j],
            p.linear_costs()[j]
        )?;
    }
    writeln!(w, "const {:?}", p.objective_constant())?;
    for e in p.equalities() {
        write!(w, "eq {} {:?}", e.handle(), e.rhs())?;
        write_terms(&mut w, e.lhs())?;
    }
    for c in p.cones() {
        let kind = match c.kind() {
            ConeKind::NonNeg => "nonneg",
            ConeKind::SecondOrder => "soc",
        };
        writeln!(w, "cone {} {} {}", c.handle(), kind, c.dim())?;
        for r in c.rows() {
            write!(w, "row {:?}", r.constant_part())?;
            write_terms(&mut w, r)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_lists_every_block() {
        let mut p = ConicProgram::new();
        let x = p.add_var("x");
        let y = p.add_var("y");
        p.add_quadratic_cost(x, 1.5);
        p.add_eq("bal", LinExpr::var(x) + LinExpr::var(y), 2.0).unwrap();
        p.add_soc("s", LinExpr::var(y), vec![LinExpr::var(x) - 1.0]).unwrap();
        let mut buf = Vec::new();
        write_program(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("var 0 x 1.5 0.0"));
        assert!(text.contains("eq bal 2.0 2 0:1.0 1:1.0"));
        assert!(text.contains("cone s soc 2"));
        assert!(text.contains("row -1.0 1 0:1.0"));
    }
}

use std::fmt::{self, Write};

use super::{DomainDef, LiftedAtom, ObjectDef, ProblemDisplay, Term, TypedVar, ROOT_TYPE};

fn write_typed_vars(f: &mut impl Write, domain: &DomainDef, vars: &[TypedVar]) -> fmt::Result {
    for (i, v) in vars.iter().enumerate() {
        if i > 0 {
            f.write_char(' ')?;
        }
        write!(f, "{} - {}", v.name, domain.types[v.ty].name)?;
    }
    Ok(())
}

fn write_objects(f: &mut impl Write, domain: &DomainDef, objs: &[ObjectDef]) -> fmt::Result {
    for o in objs {
        write!(f, " {} - {}", o.name, domain.types[o.ty].name)?;
    }
    Ok(())
}

fn write_lifted(f: &mut impl Write, domain: &DomainDef, params: &[TypedVar], atom: &LiftedAtom) -> fmt::Result {
    write!(f, "({}", domain.predicates[atom.predicate].name)?;
    for t in &atom.args {
        match *t {
            Term::Var(i) => write!(f, " {}", params[i].name)?,
            Term::Const(c) => write!(f, " {}", domain.constants[c].name)?,
        }
    }
    f.write_char(')')
}

impl fmt::Display for DomainDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "(define (domain {})", self.name)?;
        if !self.requirements.is_empty() {
            writeln!(f, "  (:requirements {})", self.requirements.join(" "))?;
        }
        if self.types.len() > 1 {
            f.write_str("  (:types")?;
            for t in &self.types[1..] {
                let parent = t.parent.unwrap_or(ROOT_TYPE);
                write!(f, " {} - {}", t.name, self.types[parent].name)?;
            }
            f.write_str(")\n")?;
        }
        if !self.constants.is_empty() {
            f.write_str("  (:constants")?;
            write_objects(f, self, &self.constants)?;
            f.write_str(")\n")?;
        }
        f.write_str("  (:predicates")?;
        for p in &self.predicates {
            write!(f, "\n    ({}", p.name)?;
            if !p.params.is_empty() {
                f.write_char(' ')?;
                write_typed_vars(f, self, &p.params)?;
            }
            f.write_char(')')?;
        }
        f.write_str(")\n")?;
        for a in &self.actions {
            writeln!(f, "  (:action {}", a.name)?;
            f.write_str("    :parameters (")?;
            write_typed_vars(f, self, &a.params)?;
            f.write_str(")\n    :precondition (and")?;
            for atom in &a.precondition {
                f.write_char(' ')?;
                write_lifted(f, self, &a.params, atom)?;
            }
            f.write_str(")\n    :effect (and")?;
            for atom in &a.add_effects {
                f.write_char(' ')?;
                write_lifted(f, self, &a.params, atom)?;
            }
            for atom in &a.del_effects {
                f.write_str(" (not ")?;
                write_lifted(f, self, &a.params, atom)?;
                f.write_char(')')?;
            }
            f.write_str("))\n")?;
        }
        f.write_str(")\n")
    }
}

impl fmt::Display for ProblemDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (d, p) = (self.domain, self.problem);
        writeln!(f, "(define (problem {})", p.name)?;
        writeln!(f, "  (:domain {})", p.domain_name)?;
        f.write_str("  (:objects")?;
        write_objects(f, d, &p.objects[p.num_constants..])?;
        f.write_str(")\n  (:init")?;
        for a in &p.init {
            write!(f, "\n    {}", p.atom_to_string(d, a))?;
        }
        f.write_str(")\n  (:goal (and")?;
        for a in &p.goal {
            write!(f, " {}", p.atom_to_string(d, a))?;
        }
        f.write_str("))\n)\n")
    }
}

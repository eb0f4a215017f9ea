//! Typed STRIPS subset of PDDL: domain and problem parsing, validation and
//! pretty-printing.
//!
//! Supported: `:strips`, `:typing`, domain `:constants`, conjunctive positive
//! preconditions, add effects and `(not ...)` delete effects. Anything else
//! (disjunction, quantifiers, numeric fluents, negative preconditions, ...)
//! is rejected with a positioned [`PddlError`].

mod parser;
mod printer;
pub mod sexpr;

pub use parser::{parse_domain, parse_problem};
pub use sexpr::Pos;

use thiserror::Error;

pub type TypeId = usize;
pub type PredId = usize;
pub type ObjId = usize;

/// Index of the implicit root type `object`.
pub const ROOT_TYPE: TypeId = 0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PddlError {
    #[error("{pos}: syntax error: expected {expected}")]
    Syntax { pos: Pos, expected: String },
    #[error("{pos}: unsupported construct `{name}`")]
    Unsupported { pos: Pos, name: String },
    #[error("{pos}: undeclared symbol `{name}`")]
    Undeclared { pos: Pos, name: String },
    #[error("{pos}: duplicate declaration of `{name}`")]
    Duplicate { pos: Pos, name: String },
    #[error("{pos}: arity mismatch in `{atom}`: expected {expected} arguments, found {found}")]
    ArityMismatch {
        pos: Pos,
        atom: String,
        expected: usize,
        found: usize,
    },
    #[error("{pos}: object `{object}` is not of type `{expected}`")]
    TypeMismatch { pos: Pos, object: String, expected: String },
    #[error("{pos}: unknown object `{name}`")]
    UnknownObject { pos: Pos, name: String },
    #[error("{pos}: problem is for domain `{found}`, expected `{expected}`")]
    DomainMismatch { pos: Pos, expected: String, found: String },
    #[error("{pos}: `{atom}` appears in both add and delete effects")]
    ConflictingEffect { pos: Pos, atom: String },
}

impl PddlError {
    pub fn pos(&self) -> Pos {
        match self {
            PddlError::Syntax { pos, .. }
            | PddlError::Unsupported { pos, .. }
            | PddlError::Undeclared { pos, .. }
            | PddlError::Duplicate { pos, .. }
            | PddlError::ArityMismatch { pos, .. }
            | PddlError::TypeMismatch { pos, .. }
            | PddlError::UnknownObject { pos, .. }
            | PddlError::DomainMismatch { pos, .. }
            | PddlError::ConflictingEffect { pos, .. } => *pos,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeDef {
    pub name: String,
    pub parent: Option<TypeId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypedVar {
    pub name: String,
    pub ty: TypeId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateDef {
    pub name: String,
    pub params: Vec<TypedVar>,
}

impl PredicateDef {
    pub fn arity(&self) -> usize {
        self.params.len()
    }
}

/// Argument of a lifted atom: an action parameter or a domain constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Term {
    Var(usize),
    Const(ObjId),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LiftedAtom {
    pub predicate: PredId,
    pub args: Vec<Term>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSchema {
    pub name: String,
    pub params: Vec<TypedVar>,
    pub precondition: Vec<LiftedAtom>,
    pub add_effects: Vec<LiftedAtom>,
    pub del_effects: Vec<LiftedAtom>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectDef {
    pub name: String,
    pub ty: TypeId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainDef {
    pub name: String,
    pub requirements: Vec<String>,
    /// `types[0]` is always the root type `object`.
    pub types: Vec<TypeDef>,
    pub constants: Vec<ObjectDef>,
    pub predicates: Vec<PredicateDef>,
    pub actions: Vec<ActionSchema>,
}

impl DomainDef {
    pub fn type_id(&self, name: &str) -> Option<TypeId> {
        self.types.iter().position(|t| t.name == name)
    }

    pub fn predicate_id(&self, name: &str) -> Option<PredId> {
        self.predicates.iter().position(|p| p.name == name)
    }

    pub fn action_id(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a.name == name)
    }

    /// True when `ty` equals `ancestor` or inherits from it.
    pub fn is_subtype(&self, mut ty: TypeId, ancestor: TypeId) -> bool {
        if ancestor == ROOT_TYPE {
            return true;
        }
        loop {
            if ty == ancestor {
                return true;
            }
            match self.types[ty].parent {
                Some(p) if p != ty => ty = p,
                _ => return false,
            }
        }
    }

    /// Predicates never added or deleted by any action.
    pub fn static_predicates(&self) -> Vec<bool> {
        let mut fluent = vec![false; self.predicates.len()];
        for a in &self.actions {
            for atom in a.add_effects.iter().chain(&a.del_effects) {
                fluent[atom.predicate] = true;
            }
        }
        fluent.into_iter().map(|f| !f).collect()
    }
}

/// A predicate applied to concrete objects.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroundAtom {
    pub predicate: PredId,
    pub args: Vec<ObjId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProblemDef {
    pub name: String,
    pub domain_name: String,
    /// Domain constants first, then the problem's own objects; `ObjId`
    /// indexes this list.
    pub objects: Vec<ObjectDef>,
    pub num_constants: usize,
    /// Sorted and deduplicated.
    pub init: Vec<GroundAtom>,
    pub goal: Vec<GroundAtom>,
}

impl ProblemDef {
    pub fn object_id(&self, name: &str) -> Option<ObjId> {
        self.objects.iter().position(|o| o.name == name)
    }

    pub fn atom_to_string(&self, domain: &DomainDef, atom: &GroundAtom) -> String {
        let mut s = format!("({}", domain.predicates[atom.predicate].name);
        for &a in &atom.args {
            s.push(' ');
            s.push_str(&self.objects[a].name);
        }
        s.push(')');
        s
    }
}

/// Display adaptor that prints a problem in PDDL syntax; the domain is
/// needed to resolve predicate and type names.
pub struct ProblemDisplay<'a> {
    pub domain: &'a DomainDef,
    pub problem: &'a ProblemDef,
}

impl ProblemDef {
    pub fn display<'a>(&'a self, domain: &'a DomainDef) -> ProblemDisplay<'a> {
        ProblemDisplay { domain, problem: self }
    }
}

use std::collections::HashMap;

use super::sexpr::{read_one, Pos, Sexpr};
use super::{
    ActionSchema, DomainDef, GroundAtom, LiftedAtom, ObjectDef, PddlError, PredicateDef, ProblemDef, Term, TypeDef,
    TypeId, TypedVar, ROOT_TYPE,
};

const SUPPORTED_REQUIREMENTS: [&str; 2] = [":strips", ":typing"];

/// Logical and structural keywords outside the supported subset.
const UNSUPPORTED_FORMS: [&str; 12] = [
    "or",
    "imply",
    "exists",
    "forall",
    "when",
    "=",
    "increase",
    "decrease",
    "assign",
    "scale-up",
    "scale-down",
    "either",
];

const UNSUPPORTED_SECTIONS: [&str; 6] = [
    ":functions",
    ":derived",
    ":durative-action",
    ":constraints",
    ":metric",
    ":timed-initial-literals",
];

fn syntax(pos: Pos, expected: &str) -> PddlError {
    PddlError::Syntax {
        pos,
        expected: expected.to_string(),
    }
}

fn expect_list<'a>(e: &'a Sexpr, what: &str) -> Result<&'a [Sexpr], PddlError> {
    e.as_list().ok_or_else(|| syntax(e.pos(), what))
}

fn expect_atom<'a>(e: &'a Sexpr, what: &str) -> Result<&'a str, PddlError> {
    e.as_atom().ok_or_else(|| syntax(e.pos(), what))
}

fn expect_name<'a>(e: &'a Sexpr, what: &str) -> Result<&'a str, PddlError> {
    let name = expect_atom(e, what)?;
    if name.starts_with('?') || name.starts_with(':') || name == "-" {
        return Err(syntax(e.pos(), what));
    }
    Ok(name)
}

fn check_unsupported_head(e: &Sexpr) -> Result<(), PddlError> {
    if let Some(t) = e.as_atom() {
        let lower = t.to_ascii_lowercase();
        if UNSUPPORTED_FORMS.contains(&lower.as_str()) {
            return Err(PddlError::Unsupported {
                pos: e.pos(),
                name: lower,
            });
        }
    }
    Ok(())
}

/// `(define (<kind> NAME) sections...)` → (name, sections)
fn split_define<'a>(root: &'a Sexpr, kind: &str) -> Result<(&'a str, &'a [Sexpr]), PddlError> {
    let items = expect_list(root, "`(define ...)`")?;
    match items.first() {
        Some(d) if d.is_keyword("define") => {}
        Some(other) => return Err(syntax(other.pos(), "`define`")),
        None => return Err(syntax(root.pos(), "`define`")),
    }
    let header = items
        .get(1)
        .ok_or_else(|| syntax(root.pos(), &format!("`({kind} NAME)`")))?;
    let h = expect_list(header, &format!("`({kind} NAME)`"))?;
    if h.len() != 2 || !h[0].is_keyword(kind) {
        return Err(syntax(header.pos(), &format!("`({kind} NAME)`")));
    }
    let name = expect_name(&h[1], &format!("{kind} name"))?;
    Ok((name, &items[2..]))
}

/// A raw `names - type` entry.
struct TypedEntry<'a> {
    name: &'a str,
    pos: Pos,
    ty: Option<(&'a str, Pos)>,
}

fn parse_typed_list<'a>(items: &'a [Sexpr], vars: bool) -> Result<Vec<TypedEntry<'a>>, PddlError> {
    let what = if vars { "variable `?name`" } else { "name" };
    let mut out: Vec<TypedEntry<'a>> = Vec::new();
    let mut pending_start = 0;
    let mut i = 0;
    while i < items.len() {
        let e = &items[i];
        if let Some(list) = e.as_list() {
            if let Some(head) = list.first() {
                check_unsupported_head(head)?;
            }
            return Err(syntax(e.pos(), what));
        }
        let text = e.as_atom().unwrap_or_default();
        if text == "-" {
            let ty = items.get(i + 1).ok_or_else(|| syntax(e.pos(), "type name after `-`"))?;
            if let Some(list) = ty.as_list() {
                if let Some(head) = list.first() {
                    check_unsupported_head(head)?;
                }
                return Err(syntax(ty.pos(), "type name"));
            }
            let ty_name = expect_name(ty, "type name")?;
            if pending_start == out.len() {
                return Err(syntax(e.pos(), what));
            }
            for entry in &mut out[pending_start..] {
                entry.ty = Some((ty_name, ty.pos()));
            }
            pending_start = out.len();
            i += 2;
            continue;
        }
        if vars != text.starts_with('?') || text.len() == 1 && vars || text.starts_with(':') {
            return Err(syntax(e.pos(), what));
        }
        out.push(TypedEntry {
            name: text,
            pos: e.pos(),
            ty: None,
        });
        i += 1;
    }
    Ok(out)
}

fn parse_requirements(items: &[Sexpr]) -> Result<Vec<String>, PddlError> {
    let mut reqs = Vec::new();
    for e in items {
        let r = expect_atom(e, "requirement keyword")?.to_ascii_lowercase();
        if !r.starts_with(':') {
            return Err(syntax(e.pos(), "requirement keyword"));
        }
        if !SUPPORTED_REQUIREMENTS.contains(&r.as_str()) {
            return Err(PddlError::Unsupported { pos: e.pos(), name: r });
        }
        if !reqs.contains(&r) {
            reqs.push(r);
        }
    }
    Ok(reqs)
}

fn parse_types(items: &[Sexpr]) -> Result<Vec<TypeDef>, PddlError> {
    let entries = parse_typed_list(items, false)?;
    let mut names: Vec<&str> = vec!["object"];
    for e in &entries {
        if e.name == "object" {
            continue;
        }
        if names.contains(&e.name) {
            return Err(PddlError::Duplicate {
                pos: e.pos,
                name: e.name.to_string(),
            });
        }
        names.push(e.name);
    }
    let mut types: Vec<TypeDef> = names
        .iter()
        .map(|n| TypeDef {
            name: n.to_string(),
            parent: None,
        })
        .collect();
    for e in &entries {
        if e.name == "object" {
            continue;
        }
        let idx = names.iter().position(|n| *n == e.name).unwrap_or(ROOT_TYPE);
        let parent = match e.ty {
            None => ROOT_TYPE,
            Some((p, ppos)) => names
                .iter()
                .position(|n| *n == p)
                .ok_or_else(|| PddlError::Undeclared {
                    pos: ppos,
                    name: p.to_string(),
                })?,
        };
        types[idx].parent = Some(parent);
    }
    // Reject cycles: every chain must reach the root within |types| steps.
    for e in &entries {
        let Some(start) = names.iter().position(|n| *n == e.name) else {
            continue;
        };
        let mut cur = start;
        let mut steps = 0;
        while cur != ROOT_TYPE {
            cur = types[cur].parent.unwrap_or(ROOT_TYPE);
            steps += 1;
            if steps > types.len() {
                return Err(syntax(e.pos, "acyclic type hierarchy"));
            }
        }
    }
    Ok(types)
}

fn resolve_type(types: &[TypeDef], ty: Option<(&str, Pos)>) -> Result<TypeId, PddlError> {
    match ty {
        None => Ok(ROOT_TYPE),
        Some((name, pos)) => types
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| PddlError::Undeclared {
                pos,
                name: name.to_string(),
            }),
    }
}

fn typed_vars(types: &[TypeDef], items: &[Sexpr]) -> Result<Vec<TypedVar>, PddlError> {
    let entries = parse_typed_list(items, true)?;
    let mut out: Vec<TypedVar> = Vec::with_capacity(entries.len());
    for e in entries {
        if out.iter().any(|v| v.name == e.name) {
            return Err(PddlError::Duplicate {
                pos: e.pos,
                name: e.name.to_string(),
            });
        }
        out.push(TypedVar {
            name: e.name.to_string(),
            ty: resolve_type(types, e.ty)?,
        });
    }
    Ok(out)
}

fn objects_from(types: &[TypeDef], items: &[Sexpr], existing: &[ObjectDef]) -> Result<Vec<ObjectDef>, PddlError> {
    let entries = parse_typed_list(items, false)?;
    let mut out: Vec<ObjectDef> = Vec::with_capacity(entries.len());
    for e in entries {
        if out.iter().chain(existing).any(|o| o.name == e.name) {
            return Err(PddlError::Duplicate {
                pos: e.pos,
                name: e.name.to_string(),
            });
        }
        out.push(ObjectDef {
            name: e.name.to_string(),
            ty: resolve_type(types, e.ty)?,
        });
    }
    Ok(out)
}

/// Collects `(:keyword ...)` sections, rejecting duplicates and unknowns.
fn sections<'a>(
    items: &'a [Sexpr],
    known: &[&str],
    repeatable: &[&str],
) -> Result<Vec<(String, &'a Sexpr)>, PddlError> {
    let mut out: Vec<(String, &Sexpr)> = Vec::new();
    for item in items {
        let list = expect_list(item, "section `(:keyword ...)`")?;
        let head = list.first().ok_or_else(|| syntax(item.pos(), "section keyword"))?;
        let kw = expect_atom(head, "section keyword")?.to_ascii_lowercase();
        if UNSUPPORTED_SECTIONS.contains(&kw.as_str()) {
            return Err(PddlError::Unsupported {
                pos: head.pos(),
                name: kw,
            });
        }
        if !known.contains(&kw.as_str()) {
            return Err(syntax(head.pos(), &format!("one of {}", known.join(", "))));
        }
        if !repeatable.contains(&kw.as_str()) && out.iter().any(|(k, _)| *k == kw) {
            return Err(PddlError::Duplicate {
                pos: head.pos(),
                name: kw,
            });
        }
        out.push((kw, item));
    }
    Ok(out)
}

fn section_body(e: &Sexpr) -> &[Sexpr] {
    &e.as_list().unwrap_or_default()[1..]
}

/// Parses a PDDL domain text into a validated [`DomainDef`].
pub fn parse_domain(text: &str) -> Result<DomainDef, PddlError> {
    let root = read_one(text)?;
    let (name, rest) = split_define(&root, "domain")?;
    let secs = sections(
        rest,
        &[":requirements", ":types", ":constants", ":predicates", ":action"],
        &[":action"],
    )?;
    let find = |kw: &str| secs.iter().find(|(k, _)| k == kw).map(|(_, e)| *e);

    let requirements = match find(":requirements") {
        Some(e) => parse_requirements(section_body(e))?,
        None => Vec::new(),
    };
    let types = match find(":types") {
        Some(e) => parse_types(section_body(e))?,
        None => vec![TypeDef {
            name: "object".into(),
            parent: None,
        }],
    };
    let constants = match find(":constants") {
        Some(e) => objects_from(&types, section_body(e), &[])?,
        None => Vec::new(),
    };
    let mut predicates: Vec<PredicateDef> = Vec::new();
    if let Some(e) = find(":predicates") {
        for p in section_body(e) {
            let list = expect_list(p, "predicate declaration `(name ?args)`")?;
            let head = list.first().ok_or_else(|| syntax(p.pos(), "predicate name"))?;
            check_unsupported_head(head)?;
            let pname = expect_name(head, "predicate name")?;
            if predicates.iter().any(|q| q.name == pname) {
                return Err(PddlError::Duplicate {
                    pos: head.pos(),
                    name: pname.to_string(),
                });
            }
            predicates.push(PredicateDef {
                name: pname.to_string(),
                params: typed_vars(&types, &list[1..])?,
            });
        }
    }

    let mut domain = DomainDef {
        name: name.to_string(),
        requirements,
        types,
        constants,
        predicates,
        actions: Vec::new(),
    };
    for (kw, e) in &secs {
        if kw == ":action" {
            let action = parse_action(&domain, e)?;
            if domain.actions.iter().any(|a| a.name == action.name) {
                return Err(PddlError::Duplicate {
                    pos: e.pos(),
                    name: action.name,
                });
            }
            domain.actions.push(action);
        }
    }
    Ok(domain)
}

fn parse_action(domain: &DomainDef, e: &Sexpr) -> Result<ActionSchema, PddlError> {
    let items = section_body(e);
    let name_e = items.first().ok_or_else(|| syntax(e.pos(), "action name"))?;
    let name = expect_name(name_e, "action name")?;
    let mut params: Option<Vec<TypedVar>> = None;
    let mut pre_e: Option<&Sexpr> = None;
    let mut eff_e: Option<&Sexpr> = None;
    let mut i = 1;
    while i < items.len() {
        let kw_e = &items[i];
        let kw = expect_atom(kw_e, "`:parameters`, `:precondition` or `:effect`")?.to_ascii_lowercase();
        let val = items
            .get(i + 1)
            .ok_or_else(|| syntax(kw_e.pos(), "value after keyword"))?;
        let dup = |b: bool| -> Result<(), PddlError> {
            if b {
                Err(PddlError::Duplicate {
                    pos: kw_e.pos(),
                    name: kw.clone(),
                })
            } else {
                Ok(())
            }
        };
        match kw.as_str() {
            ":parameters" => {
                dup(params.is_some())?;
                let list = expect_list(val, "parameter list")?;
                params = Some(typed_vars(&domain.types, list)?);
            }
            ":precondition" => {
                dup(pre_e.is_some())?;
                pre_e = Some(val);
            }
            ":effect" => {
                dup(eff_e.is_some())?;
                eff_e = Some(val);
            }
            ":duration" | ":condition" => {
                return Err(PddlError::Unsupported {
                    pos: kw_e.pos(),
                    name: kw,
                })
            }
            _ => return Err(syntax(kw_e.pos(), "`:parameters`, `:precondition` or `:effect`")),
        }
        i += 2;
    }
    let params = params.unwrap_or_default();
    let scope = Scope {
        domain,
        params: &params,
    };
    let mut precondition = Vec::new();
    if let Some(p) = pre_e {
        scope.condition(p, &mut precondition)?;
    }
    let mut add_effects = Vec::new();
    let mut del_effects = Vec::new();
    if let Some(ef) = eff_e {
        scope.effect(ef, &mut add_effects, &mut del_effects)?;
    }
    for a in &add_effects {
        if del_effects.contains(a) {
            return Err(PddlError::ConflictingEffect {
                pos: eff_e.map(Sexpr::pos).unwrap_or_default(),
                atom: domain.predicates[a.predicate].name.clone(),
            });
        }
    }
    dedup_keep_order(&mut precondition);
    dedup_keep_order(&mut add_effects);
    dedup_keep_order(&mut del_effects);
    Ok(ActionSchema {
        name: name.to_string(),
        params,
        precondition,
        add_effects,
        del_effects,
    })
}

fn dedup_keep_order(v: &mut Vec<LiftedAtom>) {
    let mut seen = Vec::with_capacity(v.len());
    v.retain(|a| {
        if seen.contains(a) {
            false
        } else {
            seen.push(a.clone());
            true
        }
    });
}

struct Scope<'a> {
    domain: &'a DomainDef,
    params: &'a [TypedVar],
}

impl Scope<'_> {
    fn condition(&self, e: &Sexpr, out: &mut Vec<LiftedAtom>) -> Result<(), PddlError> {
        let list = expect_list(e, "condition")?;
        let Some(head) = list.first() else {
            return Ok(());
        };
        if head.is_keyword("and") {
            for c in &list[1..] {
                self.condition(c, out)?;
            }
            return Ok(());
        }
        if head.is_keyword("not") {
            return Err(PddlError::Unsupported {
                pos: head.pos(),
                name: "not (negative precondition)".into(),
            });
        }
        check_unsupported_head(head)?;
        out.push(self.atom(e)?);
        Ok(())
    }

    fn effect(&self, e: &Sexpr, add: &mut Vec<LiftedAtom>, del: &mut Vec<LiftedAtom>) -> Result<(), PddlError> {
        let list = expect_list(e, "effect")?;
        let Some(head) = list.first() else {
            return Ok(());
        };
        if head.is_keyword("and") {
            for c in &list[1..] {
                self.effect(c, add, del)?;
            }
            return Ok(());
        }
        if head.is_keyword("not") {
            if list.len() != 2 {
                return Err(syntax(e.pos(), "`(not (atom))`"));
            }
            let inner = expect_list(&list[1], "atom inside `not`")?;
            if let Some(h) = inner.first() {
                if h.is_keyword("and") || h.is_keyword("not") {
                    return Err(syntax(list[1].pos(), "atom inside `not`"));
                }
                check_unsupported_head(h)?;
            }
            del.push(self.atom(&list[1])?);
            return Ok(());
        }
        check_unsupported_head(head)?;
        add.push(self.atom(e)?);
        Ok(())
    }

    fn atom(&self, e: &Sexpr) -> Result<LiftedAtom, PddlError> {
        let list = expect_list(e, "atom")?;
        let head = list.first().ok_or_else(|| syntax(e.pos(), "predicate name"))?;
        let pname = expect_name(head, "predicate name")?;
        let pid = self.domain.predicate_id(pname).ok_or_else(|| PddlError::Undeclared {
            pos: head.pos(),
            name: pname.to_string(),
        })?;
        let pred = &self.domain.predicates[pid];
        let args_e = &list[1..];
        if args_e.len() != pred.arity() {
            return Err(PddlError::ArityMismatch {
                pos: e.pos(),
                atom: pname.to_string(),
                expected: pred.arity(),
                found: args_e.len(),
            });
        }
        let mut args = Vec::with_capacity(args_e.len());
        for (a, formal) in args_e.iter().zip(&pred.params) {
            let text = expect_atom(a, "argument")?;
            let (term, ty) = if text.starts_with('?') {
                let idx = self
                    .params
                    .iter()
                    .position(|p| p.name == text)
                    .ok_or_else(|| PddlError::Undeclared {
                        pos: a.pos(),
                        name: text.to_string(),
                    })?;
                (Term::Var(idx), self.params[idx].ty)
            } else {
                let idx = self
                    .domain
                    .constants
                    .iter()
                    .position(|c| c.name == text)
                    .ok_or_else(|| PddlError::Undeclared {
                        pos: a.pos(),
                        name: text.to_string(),
                    })?;
                (Term::Const(idx), self.domain.constants[idx].ty)
            };
            let compatible = self.domain.is_subtype(ty, formal.ty)
                || matches!(term, Term::Var(_)) && self.domain.is_subtype(formal.ty, ty);
            if !compatible {
                return Err(PddlError::TypeMismatch {
                    pos: a.pos(),
                    object: text.to_string(),
                    expected: self.domain.types[formal.ty].name.clone(),
                });
            }
            args.push(term);
        }
        Ok(LiftedAtom { predicate: pid, args })
    }
}

/// Parses a problem text against an already-parsed domain.
pub fn parse_problem(text: &str, domain: &DomainDef) -> Result<ProblemDef, PddlError> {
    let root = read_one(text)?;
    let (name, rest) = split_define(&root, "problem")?;
    let secs = sections(rest, &[":domain", ":requirements", ":objects", ":init", ":goal"], &[])?;
    let find = |kw: &str| secs.iter().find(|(k, _)| k == kw).map(|(_, e)| *e);

    let dom_e = find(":domain").ok_or_else(|| syntax(root.pos(), "`(:domain NAME)`"))?;
    let dom_body = section_body(dom_e);
    if dom_body.len() != 1 {
        return Err(syntax(dom_e.pos(), "`(:domain NAME)`"));
    }
    let domain_name = expect_name(&dom_body[0], "domain name")?;
    if !domain_name.eq_ignore_ascii_case(&domain.name) {
        return Err(PddlError::DomainMismatch {
            pos: dom_body[0].pos(),
            expected: domain.name.clone(),
            found: domain_name.to_string(),
        });
    }
    if let Some(e) = find(":requirements") {
        parse_requirements(section_body(e))?;
    }

    let mut objects = domain.constants.clone();
    let num_constants = objects.len();
    if let Some(e) = find(":objects") {
        let own = objects_from(&domain.types, section_body(e), &domain.constants)?;
        objects.extend(own);
    }
    let lookup: HashMap<&str, usize> = objects.iter().enumerate().map(|(i, o)| (o.name.as_str(), i)).collect();
    let grounder = GroundParser {
        domain,
        objects: &objects,
        lookup: &lookup,
    };

    let mut init = Vec::new();
    if let Some(e) = find(":init") {
        for a in section_body(e) {
            let list = expect_list(a, "ground atom")?;
            if let Some(h) = list.first() {
                if h.is_keyword("not") || h.is_keyword("and") {
                    return Err(PddlError::Unsupported {
                        pos: h.pos(),
                        name: h.as_atom().unwrap_or_default().to_ascii_lowercase(),
                    });
                }
                check_unsupported_head(h)?;
            }
            init.push(grounder.atom(a)?);
        }
    }
    init.sort();
    init.dedup();

    let mut goal = Vec::new();
    if let Some(e) = find(":goal") {
        let body = section_body(e);
        if body.len() != 1 {
            return Err(syntax(e.pos(), "a single goal formula"));
        }
        grounder.goal(&body[0], &mut goal)?;
    }
    goal.sort();
    goal.dedup();

    Ok(ProblemDef {
        name: name.to_string(),
        domain_name: domain_name.to_string(),
        objects,
        num_constants,
        init,
        goal,
    })
}

struct GroundParser<'a> {
    domain: &'a DomainDef,
    objects: &'a [ObjectDef],
    lookup: &'a HashMap<&'a str, usize>,
}

impl GroundParser<'_> {
    fn goal(&self, e: &Sexpr, out: &mut Vec<GroundAtom>) -> Result<(), PddlError> {
        let list = expect_list(e, "goal formula")?;
        let Some(head) = list.first() else {
            return Ok(());
        };
        if head.is_keyword("and") {
            for c in &list[1..] {
                self.goal(c, out)?;
            }
            return Ok(());
        }
        if head.is_keyword("not") {
            return Err(PddlError::Unsupported {
                pos: head.pos(),
                name: "not (negative goal)".into(),
            });
        }
        check_unsupported_head(head)?;
        out.push(self.atom(e)?);
        Ok(())
    }

    fn atom(&self, e: &Sexpr) -> Result<GroundAtom, PddlError> {
        let list = expect_list(e, "ground atom")?;
        let head = list.first().ok_or_else(|| syntax(e.pos(), "predicate name"))?;
        let pname = expect_name(head, "predicate name")?;
        let pid = self.domain.predicate_id(pname).ok_or_else(|| PddlError::Undeclared {
            pos: head.pos(),
            name: pname.to_string(),
        })?;
        let pred = &self.domain.predicates[pid];
        let args_e = &list[1..];
        if args_e.len() != pred.arity() {
            return Err(PddlError::ArityMismatch {
                pos: e.pos(),
                atom: pname.to_string(),
                expected: pred.arity(),
                found: args_e.len(),
            });
        }
        let mut args = Vec::with_capacity(args_e.len());
        for (a, formal) in args_e.iter().zip(&pred.params) {
            let text = expect_name(a, "object name")?;
            let id = *self.lookup.get(text).ok_or_else(|| PddlError::UnknownObject {
                pos: a.pos(),
                name: text.to_string(),
            })?;
            if !self.domain.is_subtype(self.objects[id].ty, formal.ty) {
                return Err(PddlError::TypeMismatch {
                    pos: a.pos(),
                    object: text.to_string(),
                    expected: self.domain.types[formal.ty].name.clone(),
                });
            }
            args.push(id);
        }
        Ok(GroundAtom { predicate: pid, args })
    }
}

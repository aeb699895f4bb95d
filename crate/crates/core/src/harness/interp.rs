//! Tree-walking interpreter for fixture-language test suites.
//!
//! Runs every `test` item of the loaded units in order and reports the
//! result the way a test runner process would: an exit status, stdout and
//! stderr text, plus line coverage of every `fn` body.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::rc::Rc;
use std::time::Instant;

use crate::frontend::ast::*;
use crate::frontend::parser::parse_program;
use crate::frontend::{CoverageTable, SourceUnit};

pub const VIOLATION_PREFIX: &str = "POSTCOND_VIOLATION:";
const MAX_DEPTH: usize = 200;

#[derive(Debug, Clone)]
pub enum Value {
    Null,
    Int(i64),
    Bool(bool),
    Str(Rc<str>),
    List(Rc<RefCell<Vec<Value>>>),
    Record(Rc<RefCell<BTreeMap<String, Value>>>),
}

impl Value {
    fn list(items: Vec<Value>) -> Value {
        Value::List(Rc::new(RefCell::new(items)))
    }

    fn type_name(&self) -> &'static str {
        match self {
            Value::Null => "null",
            Value::Int(_) => "int",
            Value::Bool(_) => "bool",
            Value::Str(_) => "str",
            Value::List(_) => "list",
            Value::Record(_) => "record",
        }
    }

    fn deep_copy(&self) -> Value {
        match self {
            Value::List(items) => Value::list(items.borrow().iter().map(Value::deep_copy).collect()),
            Value::Record(fields) => Value::Record(Rc::new(RefCell::new(
                fields
                    .borrow()
                    .iter()
                    .map(|(k, v)| (k.clone(), v.deep_copy()))
                    .collect(),
            ))),
            other => other.clone(),
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Null, Value::Null) => true,
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::Str(a), Value::Str(b)) => a == b,
            (Value::List(a), Value::List(b)) => Rc::ptr_eq(a, b) || *a.borrow() == *b.borrow(),
            (Value::Record(a), Value::Record(b)) => Rc::ptr_eq(a, b) || *a.borrow() == *b.borrow(),
            _ => false,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => write!(f, "null"),
            Value::Int(v) => write!(f, "{v}"),
            Value::Bool(v) => write!(f, "{v}"),
            Value::Str(s) => write!(f, "{s}"),
            Value::List(items) => {
                write!(f, "[")?;
                for (i, v) in items.borrow().iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, "]")
            }
            Value::Record(fields) => {
                write!(f, "{{")?;
                for (i, (k, v)) in fields.borrow().iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{k}: {v}")?;
                }
                write!(f, "}}")
            }
        }
    }
}

/// Non-local exits that abort the current test.
#[derive(Debug)]
enum Halt {
    Error { line: usize, message: String },
    AssertFail { line: usize },
    Violation(String),
    Budget,
}

type Eval<T> = Result<T, Halt>;

fn err<T>(line: usize, message: impl Into<String>) -> Eval<T> {
    Err(Halt::Error {
        line,
        message: message.into(),
    })
}

enum Flow {
    Normal,
    Return(Value),
    Break,
    Continue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestStatus {
    Passed,
    AssertionFailed,
    Violation,
    Error,
    Timeout,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    /// `None` when the run was cut off by the deadline.
    pub exit_code: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    pub coverage: CoverageTable,
    pub tests: Vec<(String, TestStatus)>,
}

impl SuiteReport {
    pub fn timed_out(&self) -> bool {
        self.exit_code.is_none()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Limits {
    pub max_steps: u64,
    pub deadline: Option<Instant>,
}

struct Function {
    item: Rc<Item>,
    path: Rc<str>,
}

struct Interp {
    functions: HashMap<String, Function>,
    steps: u64,
    limits: Limits,
    depth: usize,
    hits: BTreeMap<(Rc<str>, usize), u64>,
    stdout: String,
    stderr: String,
}

const INTERP_STACK_BYTES: usize = 256 << 20;

/// Runs all tests found in `units`. Parse or setup failures yield exit status 2.
///
/// Interpretation happens on a dedicated thread with a large stack so that
/// the call-depth limit, not the host stack, bounds recursion.
pub fn run_units(units: &[SourceUnit], limits: Limits) -> SuiteReport {
    let units = units.to_vec();
    std::thread::Builder::new()
        .name("fixture-interp".into())
        .stack_size(INTERP_STACK_BYTES)
        .spawn(move || run_units_here(&units, limits))
        .expect("spawn interpreter thread")
        .join()
        .unwrap_or_else(|_| SuiteReport {
            exit_code: Some(2),
            stdout: String::new(),
            stderr: "error: interpreter panicked\n".into(),
            coverage: CoverageTable::default(),
            tests: Vec::new(),
        })
}

fn run_units_here(units: &[SourceUnit], limits: Limits) -> SuiteReport {
    let mut programs = Vec::new();
    for unit in units {
        match parse_program(&unit.text) {
            Ok(p) => programs.push((unit.path.as_str(), p)),
            Err(e) => {
                return SuiteReport {
                    exit_code: Some(2),
                    stdout: String::new(),
                    stderr: format!("error: {}: {e}\n", unit.path),
                    coverage: CoverageTable::default(),
                    tests: Vec::new(),
                }
            }
        }
    }
    run_programs(&programs, limits)
}

fn run_programs(programs: &[(&str, Program)], limits: Limits) -> SuiteReport {
    let mut coverage = CoverageTable::default();
    let mut functions = HashMap::new();
    let mut tests = Vec::new();
    for (path, program) in programs {
        let path: Rc<str> = Rc::from(*path);
        for item in &program.items {
            register_lines(&item.body, &path, &mut coverage);
            let item = Rc::new(item.clone());
            match item.kind {
                ItemKind::Function => {
                    if functions.contains_key(&item.name) {
                        return SuiteReport {
                            exit_code: Some(2),
                            stdout: String::new(),
                            stderr: format!("error: duplicate function `{}`\n", item.name),
                            coverage,
                            tests: Vec::new(),
                        };
                    }
                    functions.insert(
                        item.name.clone(),
                        Function {
                            item,
                            path: path.clone(),
                        },
                    );
                }
                ItemKind::Test => tests.push((item, path.clone())),
            }
        }
    }

    let mut interp = Interp {
        functions,
        steps: 0,
        limits,
        depth: 0,
        hits: BTreeMap::new(),
        stdout: String::new(),
        stderr: String::new(),
    };
    let mut results = Vec::new();
    let mut timed_out = false;
    for (test, path) in &tests {
        let status = match interp.run_test(test, path) {
            Ok(()) => TestStatus::Passed,
            Err(Halt::AssertFail { line }) => {
                interp
                    .stderr
                    .push_str(&format!("assertion failed: {} (line {line})\n", test.name));
                TestStatus::AssertionFailed
            }
            Err(Halt::Violation(id)) => {
                interp.stderr.push_str(&format!("{VIOLATION_PREFIX}{id}\n"));
                TestStatus::Violation
            }
            Err(Halt::Error { line, message }) => {
                interp
                    .stderr
                    .push_str(&format!("error: {} (line {line}): {message}\n", test.name));
                TestStatus::Error
            }
            Err(Halt::Budget) => {
                timed_out = true;
                TestStatus::Timeout
            }
        };
        let word = match status {
            TestStatus::Passed => "ok",
            TestStatus::AssertionFailed | TestStatus::Violation => "FAILED",
            TestStatus::Error => "ERROR",
            TestStatus::Timeout => "TIMEOUT",
        };
        interp.stdout.push_str(&format!("test {} ... {word}\n", test.name));
        results.push((test.name.clone(), status));
        if timed_out {
            break;
        }
    }

    for ((path, line), hits) in &interp.hits {
        coverage.record(path, *line, *hits);
    }
    let exit_code = if timed_out {
        None
    } else if results.iter().any(|(_, s)| *s == TestStatus::Error) {
        Some(2)
    } else if results.iter().any(|(_, s)| *s != TestStatus::Passed) {
        Some(1)
    } else {
        Some(0)
    };
    SuiteReport {
        exit_code,
        stdout: interp.stdout,
        stderr: interp.stderr,
        coverage,
        tests: results,
    }
}

fn register_lines(block: &Block, path: &str, cov: &mut CoverageTable) {
    for stmt in &block.stmts {
        cov.record(path, stmt.line, 0);
        match &stmt.kind {
            StmtKind::If {
                then_block,
                else_branch,
                ..
            } => {
                register_lines(then_block, path, cov);
                let mut branch = else_branch.as_ref();
                while let Some(b) = branch {
                    match b {
                        ElseBranch::Block(b) => {
                            register_lines(b, path, cov);
                            branch = None;
                        }
                        ElseBranch::If(s) => {
                            if let StmtKind::If {
                                then_block,
                                else_branch,
                                ..
                            } = &s.kind
                            {
                                register_lines(then_block, path, cov);
                                branch = else_branch.as_ref();
                            } else {
                                branch = None;
                            }
                        }
                    }
                }
            }
            StmtKind::While { body, .. } | StmtKind::For { body, .. } => register_lines(body, path, cov),
            _ => {}
        }
    }
}

struct Scopes {
    frames: Vec<HashMap<String, Value>>,
}

impl Scopes {
    fn new() -> Self {
        Scopes {
            frames: vec![HashMap::new()],
        }
    }

    fn get(&self, name: &str) -> Option<Value> {
        self.frames.iter().rev().find_map(|f| f.get(name).cloned())
    }

    fn set(&mut self, name: &str, value: Value) -> bool {
        for frame in self.frames.iter_mut().rev() {
            if let Some(slot) = frame.get_mut(name) {
                *slot = value;
                return true;
            }
        }
        false
    }

    fn define(&mut self, name: &str, value: Value) {
        self.frames
            .last_mut()
            .expect("at least one frame")
            .insert(name.to_string(), value);
    }
}

impl Interp {
    fn tick(&mut self) -> Eval<()> {
        self.steps += 1;
        if self.steps > self.limits.max_steps {
            return Err(Halt::Budget);
        }
        if self.steps % 4096 == 0 {
            if let Some(deadline) = self.limits.deadline {
                if Instant::now() >= deadline {
                    return Err(Halt::Budget);
                }
            }
        }
        Ok(())
    }

    fn run_test(&mut self, test: &Item, path: &Rc<str>) -> Eval<()> {
        let mut scopes = Scopes::new();
        self.depth = 0;
        match self.block(&test.body, &mut scopes, path)? {
            Flow::Normal | Flow::Return(_) => Ok(()),
            Flow::Break | Flow::Continue => err(test.line, "break or continue outside of a loop"),
        }
    }

    fn block(&mut self, block: &Block, scopes: &mut Scopes, path: &Rc<str>) -> Eval<Flow> {
        scopes.frames.push(HashMap::new());
        let mut flow = Flow::Normal;
        for stmt in &block.stmts {
            match self.stmt(stmt, scopes, path) {
                Ok(Flow::Normal) => {}
                Ok(other) => {
                    flow = other;
                    break;
                }
                Err(e) => {
                    scopes.frames.pop();
                    return Err(e);
                }
            }
        }
        scopes.frames.pop();
        Ok(flow)
    }

    fn stmt(&mut self, stmt: &Stmt, scopes: &mut Scopes, path: &Rc<str>) -> Eval<Flow> {
        self.tick()?;
        *self.hits.entry((path.clone(), stmt.line)).or_insert(0) += 1;
        match &stmt.kind {
            StmtKind::Let { name, value } => {
                let v = self.expr(value, scopes)?;
                scopes.define(name, v);
            }
            StmtKind::Assign { target, value } => {
                let v = self.expr(value, scopes)?;
                self.assign(target, v, scopes)?;
            }
            StmtKind::AugAssign { target, op, value } => {
                let current = self.expr(target, scopes)?;
                let rhs = self.expr(value, scopes)?;
                let v = binary(*op, current, rhs, stmt.line)?;
                self.assign(target, v, scopes)?;
            }
            StmtKind::If {
                cond,
                then_block,
                else_branch,
            } => {
                if self.truthy(cond, scopes)? {
                    return self.block(then_block, scopes, path);
                }
                match else_branch {
                    Some(ElseBranch::Block(b)) => return self.block(b, scopes, path),
                    Some(ElseBranch::If(s)) => return self.stmt(s, scopes, path),
                    None => {}
                }
            }
            StmtKind::While { cond, body } => {
                while self.truthy(cond, scopes)? {
                    match self.block(body, scopes, path)? {
                        Flow::Break => break,
                        Flow::Return(v) => return Ok(Flow::Return(v)),
                        Flow::Normal | Flow::Continue => {}
                    }
                }
            }
            StmtKind::For { var, iter, body, .. } => {
                let items = self.iterable(iter, scopes)?;
                for item in items {
                    scopes.frames.push(HashMap::new());
                    scopes.define(var, item);
                    let flow = self.block(body, scopes, path);
                    scopes.frames.pop();
                    match flow? {
                        Flow::Break => break,
                        Flow::Return(v) => return Ok(Flow::Return(v)),
                        Flow::Normal | Flow::Continue => {}
                    }
                }
            }
            StmtKind::Return(value) => {
                let v = match value {
                    Some(e) => self.expr(e, scopes)?,
                    None => Value::Null,
                };
                return Ok(Flow::Return(v));
            }
            StmtKind::Break => return Ok(Flow::Break),
            StmtKind::Continue => return Ok(Flow::Continue),
            StmtKind::Assert(e) => match self.expr(e, scopes)? {
                Value::Bool(true) => {}
                Value::Bool(false) => return Err(Halt::AssertFail { line: stmt.line }),
                other => return err(stmt.line, format!("assert on {} value", other.type_name())),
            },
            StmtKind::Expr(e) => {
                self.expr(e, scopes)?;
            }
        }
        Ok(Flow::Normal)
    }

    fn truthy(&mut self, cond: &Expr, scopes: &mut Scopes) -> Eval<bool> {
        match self.expr(cond, scopes)? {
            Value::Bool(b) => Ok(b),
            other => err(cond.line, format!("condition is {} not bool", other.type_name())),
        }
    }

    fn iterable(&mut self, e: &Expr, scopes: &mut Scopes) -> Eval<Vec<Value>> {
        match self.expr(e, scopes)? {
            Value::List(items) => Ok(items.borrow().clone()),
            Value::Str(s) => Ok(s.chars().map(|c| Value::Str(Rc::from(c.to_string()))).collect()),
            other => err(e.line, format!("cannot iterate over {}", other.type_name())),
        }
    }

    fn assign(&mut self, target: &Expr, value: Value, scopes: &mut Scopes) -> Eval<()> {
        match &target.kind {
            ExprKind::Var(name) => {
                if scopes.set(name, value) {
                    Ok(())
                } else {
                    err(target.line, format!("assignment to undeclared variable `{name}`"))
                }
            }
            ExprKind::Field { base, name } => match self.expr(base, scopes)? {
                Value::Record(fields) => {
                    fields.borrow_mut().insert(name.clone(), value);
                    Ok(())
                }
                other => err(target.line, format!("field assignment on {}", other.type_name())),
            },
            ExprKind::Index { base, index } => {
                let b = self.expr(base, scopes)?;
                let i = self.expr(index, scopes)?;
                match (b, i) {
                    (Value::List(items), Value::Int(i)) => {
                        let mut items = items.borrow_mut();
                        let len = items.len();
                        match usize::try_from(i).ok().filter(|&i| i < len) {
                            Some(i) => {
                                items[i] = value;
                                Ok(())
                            }
                            None => err(target.line, format!("index {i} out of bounds for length {len}")),
                        }
                    }
                    (b, i) => err(
                        target.line,
                        format!("cannot index {} with {}", b.type_name(), i.type_name()),
                    ),
                }
            }
            _ => err(target.line, "invalid assignment target"),
        }
    }

    fn expr(&mut self, e: &Expr, scopes: &mut Scopes) -> Eval<Value> {
        self.tick()?;
        let line = e.line;
        match &e.kind {
            ExprKind::Int(v) => Ok(Value::Int(*v)),
            ExprKind::Str(s) => Ok(Value::Str(Rc::from(s.as_str()))),
            ExprKind::Bool(b) => Ok(Value::Bool(*b)),
            ExprKind::Null => Ok(Value::Null),
            ExprKind::Var(name) => match scopes.get(name) {
                Some(v) => Ok(v),
                None => err(line, format!("undefined variable `{name}`")),
            },
            ExprKind::List(elems) => {
                let mut out = Vec::with_capacity(elems.len());
                for el in elems {
                    out.push(self.expr(el, scopes)?);
                }
                Ok(Value::list(out))
            }
            ExprKind::Record(fields) => {
                let mut out = BTreeMap::new();
                for (name, el) in fields {
                    let v = self.expr(el, scopes)?;
                    out.insert(name.clone(), v);
                }
                Ok(Value::Record(Rc::new(RefCell::new(out))))
            }
            ExprKind::Unary { op, operand, .. } => {
                let v = self.expr(operand, scopes)?;
                match (op, v) {
                    (UnOp::Neg, Value::Int(i)) => match i.checked_neg() {
                        Some(n) => Ok(Value::Int(n)),
                        None => err(line, "integer overflow"),
                    },
                    (UnOp::Not, Value::Bool(b)) => Ok(Value::Bool(!b)),
                    (op, v) => err(line, format!("bad operand {} for {op:?}", v.type_name())),
                }
            }
            ExprKind::Binary { op, lhs, rhs, .. } => match op {
                BinOp::And | BinOp::Or => {
                    let l = match self.expr(lhs, scopes)? {
                        Value::Bool(b) => b,
                        other => return err(line, format!("{} operand of {}", other.type_name(), op.symbol())),
                    };
                    if (*op == BinOp::And && !l) || (*op == BinOp::Or && l) {
                        return Ok(Value::Bool(l));
                    }
                    match self.expr(rhs, scopes)? {
                        Value::Bool(b) => Ok(Value::Bool(b)),
                        other => err(line, format!("{} operand of {}", other.type_name(), op.symbol())),
                    }
                }
                _ => {
                    let l = self.expr(lhs, scopes)?;
                    let r = self.expr(rhs, scopes)?;
                    binary(*op, l, r, line)
                }
            },
            ExprKind::Field { base, name } => match self.expr(base, scopes)? {
                Value::Record(fields) => match fields.borrow().get(name) {
                    Some(v) => Ok(v.clone()),
                    None => err(line, format!("record has no field `{name}`")),
                },
                other => err(line, format!("field access `.{name}` on {}", other.type_name())),
            },
            ExprKind::Index { base, index } => {
                let b = self.expr(base, scopes)?;
                let i = self.expr(index, scopes)?;
                match (b, i) {
                    (Value::List(items), Value::Int(i)) => {
                        let items = items.borrow();
                        match usize::try_from(i).ok().and_then(|i| items.get(i)) {
                            Some(v) => Ok(v.clone()),
                            None => err(line, format!("index {i} out of bounds for length {}", items.len())),
                        }
                    }
                    (Value::Str(s), Value::Int(i)) => {
                        match usize::try_from(i).ok().and_then(|i| s.chars().nth(i)) {
                            Some(c) => Ok(Value::Str(Rc::from(c.to_string()))),
                            None => err(line, format!("index {i} out of bounds for string")),
                        }
                    }
                    (b, i) => err(line, format!("cannot index {} with {}", b.type_name(), i.type_name())),
                }
            }
            ExprKind::Quant {
                kind,
                var,
                domain,
                body,
            } => {
                let items = self.iterable(domain, scopes)?;
                let mut count: i64 = 0;
                let mut total: i64 = 0;
                for item in items {
                    scopes.frames.push(HashMap::new());
                    scopes.define(var, item);
                    let v = self.expr(body, scopes);
                    scopes.frames.pop();
                    match (kind, v?) {
                        (Quantifier::Forall, Value::Bool(false)) => return Ok(Value::Bool(false)),
                        (Quantifier::Exists, Value::Bool(true)) => return Ok(Value::Bool(true)),
                        (Quantifier::Forall | Quantifier::Exists, Value::Bool(_)) => {}
                        (Quantifier::NumOf, Value::Bool(b)) => count += b as i64,
                        (Quantifier::SumOf, Value::Int(v)) => match total.checked_add(v) {
                            Some(t) => total = t,
                            None => return err(line, "integer overflow"),
                        },
                        (_, v) => return err(line, format!("quantifier body produced {}", v.type_name())),
                    }
                }
                Ok(match kind {
                    Quantifier::Forall => Value::Bool(true),
                    Quantifier::Exists => Value::Bool(false),
                    Quantifier::NumOf => Value::Int(count),
                    Quantifier::SumOf => Value::Int(total),
                })
            }
            ExprKind::Call { callee, args } => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.expr(a, scopes)?);
                }
                self.call(callee, vals, line)
            }
        }
    }

    fn call(&mut self, callee: &str, args: Vec<Value>, line: usize) -> Eval<Value> {
        if let Some(result) = self.builtin(callee, &args, line) {
            return result;
        }
        let Some(func) = self.functions.get(callee) else {
            return err(line, format!("undefined function `{callee}`"));
        };
        let item = func.item.clone();
        let path = func.path.clone();
        if item.params.len() != args.len() {
            return err(
                line,
                format!("`{callee}` expects {} arguments, got {}", item.params.len(), args.len()),
            );
        }
        if self.depth >= MAX_DEPTH {
            return err(line, "call stack exhausted");
        }
        self.depth += 1;
        let mut scopes = Scopes::new();
        for (p, v) in item.params.iter().zip(args) {
            scopes.define(p, v);
        }
        let flow = self.block(&item.body, &mut scopes, &path);
        self.depth -= 1;
        match flow? {
            Flow::Return(v) => Ok(v),
            Flow::Normal => Ok(Value::Null),
            Flow::Break | Flow::Continue => err(line, "break or continue outside of a loop"),
        }
    }

    fn builtin(&mut self, name: &str, args: &[Value], line: usize) -> Option<Eval<Value>> {
        use Value::*;
        let arity = |n: usize| -> Eval<()> {
            if args.len() == n {
                Ok(())
            } else {
                err(line, format!("`{name}` expects {n} arguments, got {}", args.len()))
            }
        };
        let bad = || err(line, format!("bad arguments to `{name}`"));
        let mut r = || -> Eval<Value> {
            match name {
                "len" => {
                    arity(1)?;
                    match &args[0] {
                        List(l) => Ok(Int(l.borrow().len() as i64)),
                        Str(s) => Ok(Int(s.chars().count() as i64)),
                        Record(r) => Ok(Int(r.borrow().len() as i64)),
                        _ => bad(),
                    }
                }
                "push" => {
                    arity(2)?;
                    match &args[0] {
                        List(l) => {
                            l.borrow_mut().push(args[1].clone());
                            Ok(Null)
                        }
                        _ => bad(),
                    }
                }
                "pop" => {
                    arity(1)?;
                    match &args[0] {
                        List(l) => match l.borrow_mut().pop() {
                            Some(v) => Ok(v),
                            None => err(line, "pop from empty list"),
                        },
                        _ => bad(),
                    }
                }
                "range" => {
                    let (lo, hi) = match args {
                        [Int(hi)] => (0, *hi),
                        [Int(lo), Int(hi)] => (*lo, *hi),
                        _ => return bad(),
                    };
                    if hi.saturating_sub(lo) > 1_000_000 {
                        return err(line, "range too large");
                    }
                    Ok(Value::list((lo..hi.max(lo)).map(Int).collect()))
                }
                "str" => {
                    arity(1)?;
                    Ok(Str(Rc::from(args[0].to_string())))
                }
                "int" => {
                    arity(1)?;
                    match &args[0] {
                        Int(i) => Ok(Int(*i)),
                        Bool(b) => Ok(Int(*b as i64)),
                        Str(s) => match s.trim().parse() {
                            Ok(i) => Ok(Int(i)),
                            Err(_) => err(line, format!("invalid integer literal {s:?}")),
                        },
                        _ => bad(),
                    }
                }
                "abs" => {
                    arity(1)?;
                    match &args[0] {
                        Int(i) => i.checked_abs().map(Int).map_or_else(|| err(line, "integer overflow"), Ok),
                        _ => bad(),
                    }
                }
                "min" | "max" => {
                    let pick_max = name == "max";
                    match args {
                        [Int(a), Int(b)] => Ok(Int(if pick_max { *a.max(b) } else { *a.min(b) })),
                        [List(l)] => {
                            let l = l.borrow();
                            let mut best: Option<i64> = None;
                            for v in l.iter() {
                                let Int(v) = v else { return bad() };
                                best = Some(match best {
                                    None => *v,
                                    Some(b) if pick_max => b.max(*v),
                                    Some(b) => b.min(*v),
                                });
                            }
                            best.map(Int).map_or_else(|| err(line, format!("`{name}` of empty list")), Ok)
                        }
                        _ => bad(),
                    }
                }
                "sum" => {
                    arity(1)?;
                    let List(l) = &args[0] else { return bad() };
                    let mut total: i64 = 0;
                    for v in l.borrow().iter() {
                        let Int(v) = v else { return bad() };
                        total = match total.checked_add(*v) {
                            Some(t) => t,
                            None => return err(line, "integer overflow"),
                        };
                    }
                    Ok(Int(total))
                }
                "contains" => {
                    arity(2)?;
                    match (&args[0], &args[1]) {
                        (List(l), v) => Ok(Bool(l.borrow().iter().any(|x| x == v))),
                        (Str(s), Str(sub)) => Ok(Bool(s.contains(&**sub))),
                        _ => bad(),
                    }
                }
                "slice" => {
                    arity(3)?;
                    let (Int(a), Int(b)) = (&args[1], &args[2]) else { return bad() };
                    let clamp = |v: i64, len: usize| v.clamp(0, len as i64) as usize;
                    match &args[0] {
                        List(l) => {
                            let l = l.borrow();
                            let (a, b) = (clamp(*a, l.len()), clamp(*b, l.len()));
                            Ok(Value::list(if a < b { l[a..b].to_vec() } else { Vec::new() }))
                        }
                        Str(s) => {
                            let chars: Vec<char> = s.chars().collect();
                            let (a, b) = (clamp(*a, chars.len()), clamp(*b, chars.len()));
                            let out: String = if a < b { chars[a..b].iter().collect() } else { String::new() };
                            Ok(Str(Rc::from(out)))
                        }
                        _ => bad(),
                    }
                }
                "sorted" => {
                    arity(1)?;
                    let List(l) = &args[0] else { return bad() };
                    let items = l.borrow().clone();
                    if items.iter().all(|v| matches!(v, Int(_))) {
                        let mut ints: Vec<i64> = items.iter().map(|v| if let Int(i) = v { *i } else { 0 }).collect();
                        ints.sort_unstable();
                        Ok(Value::list(ints.into_iter().map(Int).collect()))
                    } else if items.iter().all(|v| matches!(v, Str(_))) {
                        let mut strs: Vec<Rc<str>> = items
                            .iter()
                            .map(|v| if let Str(s) = v { s.clone() } else { Rc::from("") })
                            .collect();
                        strs.sort();
                        Ok(Value::list(strs.into_iter().map(Str).collect()))
                    } else {
                        bad()
                    }
                }
                "reverse" => {
                    arity(1)?;
                    match &args[0] {
                        List(l) => Ok(Value::list(l.borrow().iter().rev().cloned().collect())),
                        Str(s) => Ok(Str(Rc::from(s.chars().rev().collect::<String>()))),
                        _ => bad(),
                    }
                }
                "keys" => {
                    arity(1)?;
                    let Record(r) = &args[0] else { return bad() };
                    Ok(Value::list(r.borrow().keys().map(|k| Str(Rc::from(k.as_str()))).collect()))
                }
                "has" => {
                    arity(2)?;
                    match (&args[0], &args[1]) {
                        (Record(r), Str(k)) => Ok(Bool(r.borrow().contains_key(&**k))),
                        _ => bad(),
                    }
                }
                "type_of" => {
                    arity(1)?;
                    Ok(Str(Rc::from(args[0].type_name())))
                }
                "is_int" | "is_str" | "is_bool" | "is_list" | "is_record" => {
                    arity(1)?;
                    Ok(Bool(args[0].type_name() == &name[3..]))
                }
                "upper" | "lower" | "trim" => {
                    arity(1)?;
                    let Str(s) = &args[0] else { return bad() };
                    Ok(Str(Rc::from(match name {
                        "upper" => s.to_uppercase(),
                        "lower" => s.to_lowercase(),
                        _ => s.trim().to_string(),
                    })))
                }
                "snapshot" => {
                    arity(1)?;
                    Ok(args[0].deep_copy())
                }
                "ensure" => {
                    arity(2)?;
                    match (&args[0], &args[1]) {
                        (Bool(true), Str(_)) => Ok(Null),
                        (Bool(false), Str(id)) => Err(Halt::Violation(id.to_string())),
                        (other, _) => err(line, format!("postcondition evaluated to {}", other.type_name())),
                    }
                }
                "print" => {
                    let parts: Vec<String> = args.iter().map(|v| v.to_string()).collect();
                    self.stdout.push_str(&parts.join(" "));
                    self.stdout.push('\n');
                    Ok(Null)
                }
                _ => unreachable!("checked by caller"),
            }
        };
        if crate::frontend::FIXTURE_BUILTINS.contains(&name) {
            Some(r())
        } else {
            None
        }
    }
}

fn binary(op: BinOp, l: Value, r: Value, line: usize) -> Eval<Value> {
    use Value::*;
    let overflow = || err(line, "integer overflow");
    match (op, &l, &r) {
        (BinOp::Eq, _, _) => Ok(Bool(l == r)),
        (BinOp::Ne, _, _) => Ok(Bool(l != r)),
        (BinOp::Add, Int(a), Int(b)) => a.checked_add(*b).map(Int).map_or_else(overflow, Ok),
        (BinOp::Sub, Int(a), Int(b)) => a.checked_sub(*b).map(Int).map_or_else(overflow, Ok),
        (BinOp::Mul, Int(a), Int(b)) => a.checked_mul(*b).map(Int).map_or_else(overflow, Ok),
        (BinOp::Div | BinOp::Rem, Int(_), Int(0)) => err(line, "division by zero"),
        (BinOp::Div, Int(a), Int(b)) => a.checked_div(*b).map(Int).map_or_else(overflow, Ok),
        (BinOp::Rem, Int(a), Int(b)) => a.checked_rem(*b).map(Int).map_or_else(overflow, Ok),
        (BinOp::Add, Str(a), Str(b)) => Ok(Str(Rc::from(format!("{a}{b}")))),
        (BinOp::Add, List(a), List(b)) => {
            let mut out = a.borrow().clone();
            out.extend(b.borrow().iter().cloned());
            Ok(Value::list(out))
        }
        (BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge, Int(a), Int(b)) => Ok(Bool(compare(op, a.cmp(b)))),
        (BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge, Str(a), Str(b)) => Ok(Bool(compare(op, a.cmp(b)))),
        _ => err(
            line,
            format!("unsupported operands {} {} {}", l.type_name(), op.symbol(), r.type_name()),
        ),
    }
}

fn compare(op: BinOp, ord: std::cmp::Ordering) -> bool {
    use std::cmp::Ordering::*;
    match op {
        BinOp::Lt => ord == Less,
        BinOp::Le => ord != Greater,
        BinOp::Gt => ord == Greater,
        BinOp::Ge => ord != Less,
        _ => unreachable!(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{parse_unit, FIXTURE_ADAPTER};

    fn run(text: &str) -> SuiteReport {
        let unit = parse_unit("t", "t.fx", text, FIXTURE_ADAPTER).unwrap();
        run_units(
            &[unit],
            Limits {
                max_steps: 200_000,
                deadline: None,
            },
        )
    }

    #[test]
    fn passing_suite_exits_zero() {
        let r = run("fn add(a, b) { return a + b; }\ntest t { assert add(2, 3) == 5; }");
        assert_eq!(r.exit_code, Some(0));
        assert_eq!(r.tests, vec![("t".to_string(), TestStatus::Passed)]);
    }

    #[test]
    fn failing_assert_exits_one() {
        let r = run("fn add(a, b) { return a - b; }\ntest t { assert add(2, 3) == 5; }");
        assert_eq!(r.exit_code, Some(1));
        assert!(r.stderr.contains("assertion failed"));
    }

    #[test]
    fn division_by_zero_exits_two() {
        let r = run("fn d(a) { return 10 / a; }\ntest t { assert d(0) == 1; }");
        assert_eq!(r.exit_code, Some(2));
        assert!(r.stderr.contains("division by zero"));
    }

    #[test]
    fn infinite_loop_hits_budget() {
        let r = run("fn spin() { while (true) { } }\ntest t { spin(); }");
        assert!(r.timed_out());
    }

    #[test]
    fn ensure_emits_marker_and_halts_test() {
        let r = run("test t { ensure(1 > 2, \"pc7\"); assert false; }\ntest u { assert true; }");
        assert_eq!(r.exit_code, Some(1));
        assert!(r.stderr.lines().any(|l| l == "POSTCOND_VIOLATION:pc7"));
        assert_eq!(r.tests[1].1, TestStatus::Passed);
    }

    #[test]
    fn records_lists_and_quantifiers() {
        let r = run(
            "fn bump(acct) { acct.n += 1; push(acct.log, acct.n); }\n\
             test t {\n\
               let a = {n: 1, log: []};\n\
               let before = snapshot(a);\n\
               bump(a);\n\
               assert a.n == 2 && before.n == 1;\n\
               assert a.log == [2];\n\
               assert forall(i in range(3): i < 3);\n\
               assert num_of(x in [1, 5, 7]: x > 2) == 2;\n\
               assert sum_of(x in [1, 2, 3]: x * x) == 14;\n\
               assert !exists(x in []: true);\n\
               assert slice([1, 2, 3, 4], 1, 3) == [2, 3];\n\
               assert sorted([3, 1, 2]) == [1, 2, 3];\n\
             }",
        );
        assert_eq!(r.exit_code, Some(0), "{}", r.stderr);
    }

    #[test]
    fn field_access_on_null_is_runtime_error() {
        let r = run("test t { let x = null; assert x.f == 1; }");
        assert_eq!(r.exit_code, Some(2));
    }

    #[test]
    fn ordering_across_types_is_runtime_error() {
        let r = run("test t { assert null < 1; }");
        assert_eq!(r.exit_code, Some(2));
    }

    #[test]
    fn break_and_continue() {
        let r = run(
            "fn f(xs) { let t = 0; for (x in xs) { if (x < 0) { continue; } if (x > 9) { break; } t += x; } return t; }\n\
             test t { assert f([1, -2, 3, 10, 4]) == 4; }",
        );
        assert_eq!(r.exit_code, Some(0), "{}", r.stderr);
    }

    #[test]
    fn coverage_counts_statement_lines() {
        let r = run("fn f(x) {\n  if (x > 0) {\n    return 1;\n  }\n  return 0;\n}\ntest t {\n  assert f(1) == 1;\n}\n");
        let cov = &r.coverage;
        assert_eq!(cov.entries.get(&("t.fx".to_string(), 2)), Some(&1));
        assert_eq!(cov.entries.get(&("t.fx".to_string(), 3)), Some(&1));
        assert_eq!(cov.entries.get(&("t.fx".to_string(), 5)), Some(&0));
    }

    #[test]
    fn deep_recursion_is_an_error_not_a_stack_overflow() {
        let r = run("fn f(n) { return f(n + 1); }\ntest t { f(0); }");
        assert_eq!(r.exit_code, Some(2));
    }
}

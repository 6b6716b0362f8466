//! sqlparser AST -> constrained [`SqlAst`].

use sqlparser::ast::{
    self as sp, BinaryOperator, CastKind, DataType, Distinct, DuplicateTreatment, FunctionArg,
    FunctionArgExpr, FunctionArguments, GroupByExpr, JoinConstraint, JoinOperator, SelectItem,
    SetExpr, Statement, TableFactor, UnaryOperator,
};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::parser::Parser;

use super::ast::*;
use super::SqlError;

type Result<T> = std::result::Result<T, SqlError>;

fn unsupported<T>(what: impl Into<String>) -> Result<T> {
    Err(SqlError::Unsupported(what.into()))
}

pub fn parse_sql(text: &str) -> Result<SqlAst> {
    if text.trim().is_empty() {
        return Err(SqlError::Syntax("empty query".into()));
    }
    let statements = Parser::parse_sql(&SQLiteDialect {}, text)
        .map_err(|e| SqlError::Syntax(e.to_string()))?;
    let stmt = match statements.as_slice() {
        [one] => one,
        [] => return Err(SqlError::Syntax("no statement".into())),
        _ => return unsupported("multiple statements"),
    };
    match stmt {
        Statement::Query(q) => parse_query(q),
        Statement::Insert(_) => unsupported("INSERT"),
        Statement::Update { .. } => unsupported("UPDATE"),
        Statement::Delete(_) => unsupported("DELETE"),
        other => unsupported(format!("statement `{}`", first_word(&other.to_string()))),
    }
}

fn first_word(s: &str) -> &str {
    s.split_whitespace().next().unwrap_or("")
}

struct Scope {
    tables: Vec<TableRef>,
}

impl Scope {
    fn table_for_alias(&self, alias: &str) -> Result<&TableRef> {
        self.tables
            .iter()
            .find(|t| t.alias == alias)
            .or_else(|| self.tables.iter().find(|t| t.alias.eq_ignore_ascii_case(alias)))
            .or_else(|| self.tables.iter().find(|t| t.name.eq_ignore_ascii_case(alias)))
            .ok_or_else(|| SqlError::Unresolved(format!("table alias `{alias}`")))
    }

    fn column(&self, expr: &sp::Expr) -> Result<Option<ColumnRef>> {
        match expr {
            sp::Expr::Identifier(ident) => {
                if self.tables.len() != 1 {
                    return unsupported(format!(
                        "unqualified column `{}` in a multi-table query",
                        ident.value
                    ));
                }
                Ok(Some(ColumnRef::new(&self.tables[0].name, &ident.value)))
            }
            sp::Expr::CompoundIdentifier(parts) => match parts.as_slice() {
                [alias, col] => {
                    let table = self.table_for_alias(&alias.value)?;
                    Ok(Some(ColumnRef::new(&table.name, &col.value)))
                }
                _ => unsupported(format!("column reference `{expr}`")),
            },
            sp::Expr::Nested(inner) => self.column(inner),
            _ => Ok(None),
        }
    }

    fn require_column(&self, expr: &sp::Expr) -> Result<ColumnRef> {
        match self.column(expr)? {
            Some(c) => Ok(c),
            None => Err(construct(expr)),
        }
    }
}

/// Names the first disallowed construct found in an expression.
fn construct(expr: &sp::Expr) -> SqlError {
    let what = match expr {
        sp::Expr::BinaryOp { op: BinaryOperator::Or, .. } => "OR".to_string(),
        sp::Expr::Between { .. } => "BETWEEN".to_string(),
        sp::Expr::InList { .. } => "IN".to_string(),
        sp::Expr::Subquery(_) | sp::Expr::InSubquery { .. } | sp::Expr::Exists { .. } => {
            "nested SELECT".to_string()
        }
        sp::Expr::Case { .. } => "CASE".to_string(),
        sp::Expr::IsNull(_) | sp::Expr::IsNotNull(_) => "IS NULL".to_string(),
        sp::Expr::Like { negated: true, .. } => "NOT LIKE".to_string(),
        sp::Expr::UnaryOp { op: UnaryOperator::Not, .. } => "NOT".to_string(),
        sp::Expr::Nested(inner) => return construct(inner),
        other => format!("expression `{other}`"),
    };
    SqlError::Unsupported(what)
}

fn parse_query(q: &sp::Query) -> Result<SqlAst> {
    if q.with.is_some() {
        return unsupported("WITH");
    }
    if q.offset.is_some() {
        return unsupported("OFFSET");
    }
    if q.fetch.is_some() || !q.limit_by.is_empty() || !q.locks.is_empty() {
        return unsupported("FETCH/LIMIT BY/locking clause");
    }
    let select = match q.body.as_ref() {
        SetExpr::Select(s) => s,
        SetExpr::SetOperation { op, .. } => return unsupported(op.to_string().to_uppercase()),
        SetExpr::Query(_) => return unsupported("nested SELECT"),
        SetExpr::Values(_) => return unsupported("VALUES"),
        SetExpr::Insert(_) => return unsupported("INSERT"),
        SetExpr::Update(_) => return unsupported("UPDATE"),
        SetExpr::Table(_) => return unsupported("TABLE"),
    };
    if select.having.is_some() {
        return unsupported("HAVING");
    }
    if select.top.is_some() || select.into.is_some() || select.qualify.is_some() {
        return unsupported("TOP/INTO/QUALIFY");
    }
    let distinct = match &select.distinct {
        None => false,
        Some(Distinct::Distinct) => true,
        Some(Distinct::On(_)) => return unsupported("DISTINCT ON"),
    };

    let (scope, joins) = parse_from(&select.from)?;

    let mut select_items = Vec::new();
    for item in &select.projection {
        let (expr, alias) = match item {
            SelectItem::UnnamedExpr(e) => (e, None),
            SelectItem::ExprWithAlias { expr, alias } => (expr, Some(alias.value.clone())),
            _ => return unsupported("SELECT *"),
        };
        let (operand, aggregate) = parse_value_expr(&scope, expr)?;
        if matches!(operand, Operand::Star) && aggregate != Some(Aggregate::Count) {
            return unsupported("SELECT *");
        }
        select_items.push(Projection { operand, aggregate, alias });
    }

    let mut where_conjuncts = Vec::new();
    if let Some(selection) = &select.selection {
        let mut conjuncts = Vec::new();
        flatten_and(selection, &mut conjuncts)?;
        for c in conjuncts {
            where_conjuncts.push(parse_predicate(&scope, c)?);
        }
    }

    let group_key = match &select.group_by {
        GroupByExpr::Expressions(exprs, modifiers) => {
            if !modifiers.is_empty() {
                return unsupported("GROUP BY modifiers");
            }
            match exprs.as_slice() {
                [] => None,
                [one] => Some(scope.require_column(one)?),
                _ => return unsupported("multi-column GROUP BY"),
            }
        }
        GroupByExpr::All(_) => return unsupported("GROUP BY ALL"),
    };

    let order_by = match &q.order_by {
        None => None,
        Some(ob) => {
            if ob.interpolate.is_some() {
                return unsupported("INTERPOLATE");
            }
            match ob.exprs.as_slice() {
                [] => None,
                [one] => {
                    if one.nulls_first.is_some() || one.with_fill.is_some() {
                        return unsupported("NULLS FIRST/LAST");
                    }
                    let key = match parse_value_expr(&scope, &one.expr)? {
                        (Operand::Column(c), None) => OrderKey::Column(c),
                        (Operand::Derived(d), None) => OrderKey::Derived(d),
                        (Operand::Column(c), Some(agg)) => {
                            OrderKey::Aggregate { aggregate: agg, target: Some(c) }
                        }
                        (Operand::Star, Some(agg)) => {
                            OrderKey::Aggregate { aggregate: agg, target: None }
                        }
                        _ => return unsupported("ORDER BY expression"),
                    };
                    Some(OrderSpec { key, ascending: one.asc.unwrap_or(true) })
                }
                _ => return unsupported("multi-key ORDER BY"),
            }
        }
    };

    let limit = match &q.limit {
        None => None,
        Some(sp::Expr::Value(sp::Value::Number(n, _))) => match n.parse::<u64>() {
            Ok(v) => Some(v),
            Err(_) => return unsupported(format!("LIMIT {n}")),
        },
        Some(other) => return unsupported(format!("LIMIT {other}")),
    };

    let group_by = match group_key {
        None => None,
        Some(key) => Some(group_spec(key, &select_items, order_by.as_ref())?),
    };

    let ast = SqlAst {
        tables: scope.tables,
        joins,
        select_items,
        where_conjuncts,
        group_by,
        order_by,
        limit,
        distinct,
    };
    check_aggregate_shape(&ast)?;
    Ok(ast)
}

fn group_spec(
    key: ColumnRef,
    items: &[Projection],
    order: Option<&OrderSpec>,
) -> Result<GroupSpec> {
    let mut aggs: Vec<(Aggregate, Option<ColumnRef>)> = Vec::new();
    for p in items {
        match (&p.operand, p.aggregate) {
            (Operand::Column(c), None) if *c != key => {
                return unsupported(format!("non-grouped column `{}`", c.prefixed_name));
            }
            (Operand::Derived(_), _) => return unsupported("derived expression with GROUP BY"),
            (Operand::Column(c), Some(a)) => aggs.push((a, Some(c.clone()))),
            (Operand::Star, Some(a)) => aggs.push((a, None)),
            _ => {}
        }
    }
    if let Some(OrderSpec { key: OrderKey::Aggregate { aggregate, target }, .. }) = order {
        aggs.push((*aggregate, target.clone()));
    }
    aggs.dedup();
    match aggs.as_slice() {
        [] => Ok(GroupSpec { key, aggregation: Aggregate::Count, target: None }),
        [(a, t)] => Ok(GroupSpec { key, aggregation: *a, target: t.clone() }),
        _ => unsupported("multiple aggregates"),
    }
}

fn check_aggregate_shape(ast: &SqlAst) -> Result<()> {
    let n_agg = ast.select_items.iter().filter(|p| p.aggregate.is_some()).count();
    if ast.group_by.is_some() {
        if ast.distinct {
            return unsupported("DISTINCT with GROUP BY");
        }
        return Ok(());
    }
    if matches!(ast.order_by, Some(OrderSpec { key: OrderKey::Aggregate { .. }, .. })) {
        return unsupported("aggregate in ORDER BY without GROUP BY");
    }
    if n_agg > 1 {
        return unsupported("multiple aggregates");
    }
    if n_agg == 1 {
        if ast.select_items.len() > 1 {
            return unsupported("aggregate mixed with plain columns without GROUP BY");
        }
        if ast.order_by.is_some() || ast.limit.is_some() || ast.distinct {
            return unsupported("ORDER BY/LIMIT/DISTINCT over an ungrouped aggregate");
        }
    }
    Ok(())
}

fn parse_from(from: &[sp::TableWithJoins]) -> Result<(Scope, Vec<JoinSpec>)> {
    let twj = match from {
        [one] => one,
        [] => return unsupported("SELECT without FROM"),
        _ => return unsupported("comma join"),
    };
    let mut scope = Scope { tables: vec![table_ref(&twj.relation)?] };
    let mut pending = Vec::new();
    for join in &twj.joins {
        let constraint = match &join.join_operator {
            JoinOperator::Inner(c) => c,
            JoinOperator::LeftOuter(_) => return unsupported("LEFT JOIN"),
            JoinOperator::RightOuter(_) => return unsupported("RIGHT JOIN"),
            JoinOperator::FullOuter(_) => return unsupported("FULL JOIN"),
            JoinOperator::CrossJoin => return unsupported("CROSS JOIN"),
            _ => return unsupported("non-INNER join"),
        };
        let on = match constraint {
            JoinConstraint::On(e) => e.clone(),
            _ => return unsupported("join without ON"),
        };
        let t = table_ref(&join.relation)?;
        if scope.tables.iter().any(|x| x.name.eq_ignore_ascii_case(&t.name)) {
            return unsupported("self-join");
        }
        if scope.tables.iter().any(|x| x.alias.eq_ignore_ascii_case(&t.alias)) {
            return Err(SqlError::Unresolved(format!("duplicate alias `{}`", t.alias)));
        }
        scope.tables.push(t);
        pending.push(on);
    }
    let mut joins = Vec::new();
    for on in pending {
        let mut e = &on;
        while let sp::Expr::Nested(inner) = e {
            e = inner;
        }
        let (l, r) = match e {
            sp::Expr::BinaryOp { left, op: BinaryOperator::Eq, right } => (left, right),
            other => return Err(construct_join(other)),
        };
        let alias_of = |x: &sp::Expr| match x {
            sp::Expr::CompoundIdentifier(parts) if parts.len() == 2 => Ok(parts[0].value.clone()),
            _ => unsupported(format!("join key `{x}`")),
        };
        let left_alias = alias_of(l)?;
        let right_alias = alias_of(r)?;
        joins.push(JoinSpec {
            left_col: scope.require_column(l)?,
            right_col: scope.require_column(r)?,
            left_alias,
            right_alias,
            kind: JoinKind::Inner,
        });
    }
    Ok((scope, joins))
}

fn construct_join(e: &sp::Expr) -> SqlError {
    match construct(e) {
        SqlError::Unsupported(w) => SqlError::Unsupported(format!("join condition: {w}")),
        other => other,
    }
}

fn table_ref(factor: &TableFactor) -> Result<TableRef> {
    match factor {
        TableFactor::Table { name, alias, args: None, .. } => {
            let name = match name.0.as_slice() {
                [one] => one.value.clone(),
                _ => return unsupported(format!("qualified table name `{name}`")),
            };
            let alias = alias.as_ref().map(|a| a.name.value.clone()).unwrap_or_else(|| name.clone());
            Ok(TableRef { alias, name })
        }
        TableFactor::Derived { .. } => unsupported("nested SELECT"),
        other => unsupported(format!("table factor `{other}`")),
    }
}

fn flatten_and<'a>(expr: &'a sp::Expr, out: &mut Vec<&'a sp::Expr>) -> Result<()> {
    match expr {
        sp::Expr::BinaryOp { left, op: BinaryOperator::And, right } => {
            flatten_and(left, out)?;
            flatten_and(right, out)
        }
        sp::Expr::BinaryOp { op: BinaryOperator::Or, .. } => unsupported("OR"),
        sp::Expr::Nested(inner) => flatten_and(inner, out),
        other => {
            out.push(other);
            Ok(())
        }
    }
}

fn literal(expr: &sp::Expr) -> Option<Scalar> {
    match expr {
        sp::Expr::Value(sp::Value::Number(n, _)) => Some(number_literal(n, false)),
        sp::Expr::Value(sp::Value::SingleQuotedString(s)) => Some(Scalar::Text(s.clone())),
        sp::Expr::UnaryOp { op: UnaryOperator::Minus, expr } => match expr.as_ref() {
            sp::Expr::Value(sp::Value::Number(n, _)) => Some(number_literal(n, true)),
            _ => None,
        },
        sp::Expr::Nested(inner) => literal(inner),
        _ => None,
    }
}

fn number_literal(text: &str, negative: bool) -> Scalar {
    let signed = if negative { format!("-{text}") } else { text.to_string() };
    match signed.parse::<i64>() {
        Ok(i) => Scalar::Int(i),
        Err(_) => Scalar::Float(signed.parse::<f64>().unwrap_or(f64::NAN)),
    }
}

fn function_args(f: &sp::Function) -> Result<(Vec<&FunctionArgExpr>, bool)> {
    if f.filter.is_some() || f.over.is_some() || f.null_treatment.is_some() {
        return unsupported(format!("function `{}` modifiers", f.name));
    }
    if !matches!(f.parameters, FunctionArguments::None) {
        return unsupported(format!("function `{}` parameters", f.name));
    }
    match &f.args {
        FunctionArguments::List(list) => {
            if !list.clauses.is_empty() {
                return unsupported(format!("function `{}` clauses", f.name));
            }
            let distinct = matches!(list.duplicate_treatment, Some(DuplicateTreatment::Distinct));
            let mut args = Vec::new();
            for a in &list.args {
                match a {
                    FunctionArg::Unnamed(e) => args.push(e),
                    _ => return unsupported(format!("named argument in `{}`", f.name)),
                }
            }
            Ok((args, distinct))
        }
        FunctionArguments::Subquery(_) => unsupported("nested SELECT"),
        FunctionArguments::None => Ok((Vec::new(), false)),
    }
}

fn function_name(f: &sp::Function) -> String {
    f.name.0.last().map(|i| i.value.to_ascii_uppercase()).unwrap_or_default()
}

/// Parses a projection or ORDER BY expression.
fn parse_value_expr(scope: &Scope, expr: &sp::Expr) -> Result<(Operand, Option<Aggregate>)> {
    if let Some(c) = scope.column(expr)? {
        return Ok((Operand::Column(c), None));
    }
    match expr {
        sp::Expr::Function(f) => {
            let name = function_name(f);
            let Some(agg) = Aggregate::parse(&name) else {
                return unsupported(format!("function `{name}` in projection"));
            };
            let (args, distinct) = function_args(f)?;
            if distinct {
                return unsupported(format!("{name}(DISTINCT)"));
            }
            match args.as_slice() {
                [FunctionArgExpr::Wildcard] if agg == Aggregate::Count => {
                    Ok((Operand::Star, Some(agg)))
                }
                [FunctionArgExpr::Expr(e)] => match scope.column(e)? {
                    Some(c) => Ok((Operand::Column(c), Some(agg))),
                    None => unsupported(format!("{name} over an expression")),
                },
                _ => unsupported(format!("{name} arguments")),
            }
        }
        sp::Expr::BinaryOp { left, op, right } => {
            let op = match op {
                BinaryOperator::Plus => ArithOp::Add,
                BinaryOperator::Minus => ArithOp::Sub,
                BinaryOperator::Multiply => ArithOp::Mul,
                BinaryOperator::Divide => ArithOp::Div,
                _ => return Err(construct(expr)),
            };
            let (left, cast_left) = derived_side(scope, left)?;
            let (right, cast_right) = derived_side(scope, right)?;
            if cast_right {
                return unsupported("CAST on the right operand");
            }
            Ok((Operand::Derived(Derived { left, op, right, cast_left }), None))
        }
        sp::Expr::Nested(inner) => parse_value_expr(scope, inner),
        other => Err(construct(other)),
    }
}

fn derived_side(scope: &Scope, expr: &sp::Expr) -> Result<(ColumnRef, bool)> {
    if let Some(c) = scope.column(expr)? {
        return Ok((c, false));
    }
    match expr {
        sp::Expr::Cast { kind: CastKind::Cast, expr, data_type: DataType::Real, format: None } => {
            Ok((scope.require_column(expr)?, true))
        }
        sp::Expr::Nested(inner) => derived_side(scope, inner),
        other => Err(construct(other)),
    }
}

fn comparison(op: &BinaryOperator) -> Option<ConditionKind> {
    Some(match op {
        BinaryOperator::Eq => ConditionKind::EqualTo,
        BinaryOperator::NotEq => ConditionKind::NotEqualTo,
        BinaryOperator::Gt => ConditionKind::GreaterThan,
        BinaryOperator::Lt => ConditionKind::LessThan,
        BinaryOperator::GtEq => ConditionKind::GreaterThanEqualTo,
        BinaryOperator::LtEq => ConditionKind::LessThanEqualTo,
        _ => return None,
    })
}

/// Left side of a comparison: a column, optionally under SUBSTR.
fn filter_target(scope: &Scope, expr: &sp::Expr) -> Result<Option<(ColumnRef, Option<Transform>)>> {
    if let Some(c) = scope.column(expr)? {
        return Ok(Some((c, None)));
    }
    if let sp::Expr::Function(f) = expr {
        if function_name(f) == "SUBSTR" || function_name(f) == "SUBSTRING" {
            let (args, _) = function_args(f)?;
            let exprs: Vec<&sp::Expr> = args
                .iter()
                .map(|a| match a {
                    FunctionArgExpr::Expr(e) => Ok(e),
                    _ => unsupported("SUBSTR arguments"),
                })
                .collect::<Result<_>>()?;
            let [col, start, len] = exprs.as_slice() else {
                return unsupported("SUBSTR without a length");
            };
            let col = scope.require_column(col)?;
            let (Some(Scalar::Int(start)), Some(Scalar::Int(len))) = (literal(start), literal(len))
            else {
                return unsupported("SUBSTR with non-integer bounds");
            };
            if start < 1 || len < 0 {
                return unsupported("SUBSTR with non-positive start");
            }
            let start_index = (start - 1) as usize;
            return Ok(Some((
                col,
                Some(Transform::Substring { start_index, end_index: start_index + len as usize }),
            )));
        }
    }
    Ok(None)
}

fn parse_predicate(scope: &Scope, expr: &sp::Expr) -> Result<Predicate> {
    match expr {
        sp::Expr::BinaryOp { left, op, right } => {
            let Some(cond) = comparison(op) else {
                return Err(construct(expr));
            };
            if let Some(p) = instr_predicate(scope, left, cond, right)? {
                return Ok(p);
            }
            if let (Some((column, transform)), Some(value)) =
                (filter_target(scope, left)?, literal(right))
            {
                return Ok(Predicate { column, condition: cond, value, transform });
            }
            if let (Some(value), Some((column, transform))) =
                (literal(left), filter_target(scope, right)?)
            {
                return Ok(Predicate { column, condition: cond.flipped(), value, transform });
            }
            for side in [left, right] {
                if literal(side).is_none() && scope.column(side)?.is_none() {
                    return Err(construct(side));
                }
            }
            unsupported(format!("comparison `{expr}`"))
        }
        sp::Expr::Like { negated: false, any: false, expr: target, pattern, escape_char: None } => {
            let Some((column, transform)) = filter_target(scope, target)? else {
                return unsupported(format!("LIKE over `{target}`"));
            };
            match literal(pattern) {
                Some(Scalar::Text(p)) => Ok(Predicate {
                    column,
                    condition: ConditionKind::Like,
                    value: Scalar::Text(p),
                    transform,
                }),
                _ => unsupported("LIKE with a non-string pattern"),
            }
        }
        sp::Expr::Like { escape_char: Some(_), negated: false, .. } => unsupported("LIKE ESCAPE"),
        sp::Expr::Nested(inner) => parse_predicate(scope, inner),
        other => Err(construct(other)),
    }
}

/// `INSTR(col, 'x') > 0` is the SQL spelling of `contains`.
fn instr_predicate(
    scope: &Scope,
    left: &sp::Expr,
    cond: ConditionKind,
    right: &sp::Expr,
) -> Result<Option<Predicate>> {
    let sp::Expr::Function(f) = left else { return Ok(None) };
    if function_name(f) != "INSTR" {
        return Ok(None);
    }
    let (args, _) = function_args(f)?;
    let [FunctionArgExpr::Expr(col), FunctionArgExpr::Expr(needle)] = args.as_slice() else {
        return unsupported("INSTR arguments");
    };
    let column = scope.require_column(col)?;
    let Some(Scalar::Text(needle)) = literal(needle) else {
        return unsupported("INSTR with a non-string needle");
    };
    let is_positive = matches!(
        (cond, literal(right)),
        (ConditionKind::GreaterThan, Some(Scalar::Int(0))) | (ConditionKind::GreaterThanEqualTo, Some(Scalar::Int(1)))
    );
    if !is_positive {
        return unsupported("INSTR comparison other than > 0");
    }
    Ok(Some(Predicate {
        column,
        condition: ConditionKind::Contains,
        value: Scalar::Text(needle),
        transform: None,
    }))
}

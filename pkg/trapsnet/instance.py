"""
Reading and writing problem-instance files.

The grammar is a restricted, RDDL-instance-like language:

    instance <name> {
        domain = <id>;
        objects { <type> : {o1, ..., on}; };
        non-fluents { <name>(<args>) = <value>; ... };
        init-state { <fluent>(<obj>) = <value>; ... };
        horizon = <int>;
        discount = <real>;
        params { <key> = <real>; ... }
    }

Values are numbers or `true`/`false`; unlisted atoms are 0. Line comments
start with `//`. It is LALR(1), so one token of lookahead suffices.
"""
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import jinja2
import numpy as np
from lark import Lark, Transformer, v_args
from lark.exceptions import (
    UnexpectedCharacters,
    UnexpectedEOF,
    UnexpectedInput,
)

from .domains import SCHEMAS, params_from_dict, params_to_dict, parse_domain
from .errors import ParseError, SemanticError
from .mdp import ProblemInstance

GRAMMAR = r"""
    start: "instance" NAME "{" domain objects nonfluents initstate horizon discount params? "}"

    domain: "domain" "=" NAME ";"
    objects: "objects" "{" typedecl* "}" ";"
    typedecl: NAME ":" "{" [NAME ("," NAME)*] "}" ";"
    nonfluents: "non-fluents" "{" assignment* "}" ";"
    initstate: "init-state" "{" assignment* "}" ";"
    assignment: NAME "(" NAME ("," NAME)* ")" "=" value ";"
    horizon: "horizon" "=" INT ";"
    discount: "discount" "=" number ";"
    params: "params" "{" param* "}" ";"?
    param: NAME "=" number ";"

    value: number
         | "true" -> true
         | "false" -> false
    number: SIGNED_NUMBER

    NAME: /[A-Za-z_][A-Za-z0-9_]*/
    COMMENT: /\/\/[^\n]*/

    %import common.INT
    %import common.SIGNED_NUMBER
    %import common.WS
    %ignore WS
    %ignore COMMENT
"""

_parser = Lark(GRAMMAR, parser="lalr", propagate_positions=True)

_templates = jinja2.Environment(
    loader=jinja2.PackageLoader("trapsnet", "templates"),
    trim_blocks=True,
    keep_trailing_newline=True,
    undefined=jinja2.StrictUndefined,
)


@dataclass
class InstanceDocument:
    text: str
    instance: ProblemInstance
    path: Optional[Path] = None


@dataclass
class _Atom:
    name: str
    args: tuple
    value: float
    line: int
    column: int


@v_args(inline=True)
class _Builder(Transformer):
    """Turn the parse tree into plain Python values."""

    def start(self, name, domain, objects, nonfluents, initstate, horizon,
              discount, params=None):
        return {
            "name": str(name),
            "domain": domain,
            "objects": objects,
            "nonfluents": nonfluents,
            "initstate": initstate,
            "horizon": horizon,
            "discount": discount,
            "params": params or [],
        }

    def domain(self, name):
        return name

    def objects(self, *decls):
        return list(decls)

    def typedecl(self, type_name, *names):
        return type_name, [name for name in names if name is not None]

    def nonfluents(self, *atoms):
        return list(atoms)

    initstate = nonfluents

    def assignment(self, name, *rest):
        *args, value = rest
        return _Atom(str(name), tuple(str(a) for a in args), value,
                     name.line, name.column)

    def horizon(self, token):
        return int(token)

    def discount(self, value):
        return value

    def params(self, *items):
        return list(items)

    def param(self, key, value):
        return key, value

    def value(self, number):
        return number

    def true(self):
        return 1.0

    def false(self):
        return 0.0

    def number(self, token):
        return float(token)


def _expected_names(names):
    """Map terminal names to the text a user would type."""
    shown = set()
    for name in names:
        try:
            pattern = _parser.get_terminal(name).pattern
        except KeyError:
            shown.add(name)
            continue
        if pattern.type == "str":
            shown.add(pattern.value)
        else:
            shown.add(name.lower())
    return shown


def _syntax_error(error, text):
    if isinstance(error, UnexpectedEOF):
        lines = text.splitlines() or [""]
        line, column = len(lines), len(lines[-1]) + 1
        return ParseError(line, column, "unexpected end of input",
                          _expected_names(error.expected))
    if isinstance(error, UnexpectedCharacters):
        found = text[error.pos_in_stream:error.pos_in_stream + 1]
        return ParseError(error.line, error.column,
                          f"unexpected character {found!r}",
                          _expected_names(error.allowed or ()))
    token = error.token
    message = f"unexpected {str(token)!r}"
    if token.type == "$END":
        message = "unexpected end of input"
    return ParseError(error.line, error.column, message,
                      _expected_names(error.expected))


def _semantic(atom, message):
    return SemanticError(f"line {atom.line}, column {atom.column}: {message}")


def _fill(atoms, columns, binary, index, size, directed):
    """Collect atom values into unary and binary matrices."""
    unary = np.zeros((size, len(columns)))
    adjacency = np.zeros((size, size), dtype=np.int8)
    seen = set()
    for atom in atoms:
        key = (atom.name, atom.args)
        if key in seen:
            raise _semantic(atom, f"duplicate assignment to {atom.name}"
                            f"({', '.join(atom.args)})")
        seen.add(key)
        for arg in atom.args:
            if arg not in index:
                raise _semantic(atom, f"unknown object '{arg}'")
        if atom.name in columns:
            if len(atom.args) != 1:
                raise _semantic(atom, f"{atom.name} takes one argument")
            unary[index[atom.args[0]], columns.index(atom.name)] = atom.value
        elif binary is not None and atom.name == binary:
            if len(atom.args) != 2:
                raise _semantic(atom, f"{atom.name} takes two arguments")
            if atom.value not in (0.0, 1.0):
                raise _semantic(atom, f"{atom.name} must be 0 or 1")
            source, target = (index[a] for a in atom.args)
            if source == target and atom.value:
                raise _semantic(atom, f"self-loop on '{atom.args[0]}'")
            adjacency[source, target] = int(atom.value)
        else:
            raise _semantic(atom, f"unknown predicate '{atom.name}'")
    if not directed:
        adjacency = np.maximum(adjacency, adjacency.T)
    return unary, adjacency


def parse_instance(text):
    """Parse instance text into a ProblemInstance."""
    try:
        tree = _parser.parse(text)
    except UnexpectedInput as error:
        raise _syntax_error(error, text) from None
    doc = _Builder().transform(tree)

    domain = parse_domain(str(doc["domain"]))
    schema = SCHEMAS[domain]
    if len(doc["objects"]) != 1:
        raise SemanticError(
            f"exactly one object type is supported, got {len(doc['objects'])}"
        )
    type_name, names = doc["objects"][0]
    if str(type_name) != schema.object_type:
        raise SemanticError(
            f"line {type_name.line}: {domain.value} objects have type "
            f"'{schema.object_type}', not '{type_name}'"
        )
    objects = tuple(str(name) for name in names)
    if len(set(objects)) != len(objects):
        raise SemanticError("object names must be unique")
    index = {name: i for i, name in enumerate(objects)}

    nonfluents, adjacency = _fill(doc["nonfluents"], list(schema.nonfluents),
                                  schema.relation, index, len(objects),
                                  schema.directed)
    fluents, _ = _fill(doc["initstate"], list(schema.fluents), None, index,
                       len(objects), True)
    if np.any((fluents != 0) & (fluents != 1)):
        raise SemanticError("boolean fluents must be 0 or 1")

    params = {}
    for key, value in doc["params"]:
        if str(key) in params:
            raise SemanticError(
                f"line {key.line}: duplicate parameter '{key}'"
            )
        params[str(key)] = value

    return ProblemInstance(
        name=doc["name"],
        objects=objects,
        unary_nonfluents=nonfluents,
        adjacency=adjacency,
        initial_fluents=fluents.astype(np.int8),
        horizon=doc["horizon"],
        discount=doc["discount"],
        params=params_from_dict(domain, params),
    )


def _format_value(value):
    if value == 1:
        return "true"
    return repr(float(value))


def _format_number(value):
    value = float(value)
    if math.isfinite(value) and value == int(value):
        return f"{value:.1f}"
    return repr(value)


def write_instance(instance):
    """Render an instance in canonical form.

    Atoms are sorted by predicate and then by object order; zero-valued
    atoms are omitted since they are the default.
    """
    schema = instance.schema
    objects = instance.objects
    adjacency = instance.adjacency
    nonfluents = []
    for column, name in sorted(enumerate(schema.nonfluents),
                               key=lambda item: item[1]):
        for i, value in enumerate(instance.unary_nonfluents[:, column]):
            if value:
                nonfluents.append((f"{name}({objects[i]})",
                                   _format_value(value)))
    relation = []
    for i, j in zip(*np.nonzero(adjacency)):
        if schema.directed or i < j:
            relation.append((f"{schema.relation}({objects[i]}, {objects[j]})",
                             "true"))
    nonfluents = sorted(nonfluents + relation,
                        key=lambda item: item[0].split("(")[0])

    fluents = []
    for column, name in sorted(enumerate(schema.fluents),
                               key=lambda item: item[1]):
        for i, value in enumerate(instance.initial_fluents[:, column]):
            if value:
                fluents.append((f"{name}({objects[i]})", _format_value(value)))

    params = sorted(
        (key, _format_number(value))
        for key, value in params_to_dict(instance.params).items()
    )
    return _templates.get_template("instance.rddl").render(
        name=instance.name,
        domain=instance.domain.value,
        object_type=schema.object_type,
        objects=objects,
        nonfluents=nonfluents,
        fluents=fluents,
        horizon=instance.horizon,
        discount=_format_number(instance.discount),
        params=params,
    )


def read_instance(path):
    """Read and parse an instance file."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        return InstanceDocument(text, parse_instance(text), path)
    except (ParseError, SemanticError) as error:
        raise type(error)(*_with_path(error, path)) from None


def _with_path(error, path):
    if isinstance(error, ParseError):
        return error.line, error.column, f"{path}: {error.message}", \
            error.expected
    return (f"{path}: {error}",)


def save_instance(instance, path):
    text = write_instance(instance)
    Path(path).write_text(text, encoding="utf-8", newline="\n")
    return text

"""Schema inference, the [0, 1] tabular encoding and its inverse, and folds."""

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError, DataError, UnsupportedCardinalityError, UsageError

KINDS = ("numeric", "categorical")
ROLES = ("attribute", "sensitive", "decision")
MISSING_TOKENS = ("", "?")


@dataclass
class Column:
    name: str
    kind: str
    role: str = "attribute"
    categories: list = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.role not in ROLES:
            raise ConfigError(f"column {self.name!r}: unknown role {self.role!r}")
        if self.categories is not None:
            self.categories = [str(c) for c in self.categories]
            if not self.categories or len(set(self.categories)) != len(self.categories):
                raise ConfigError(f"column {self.name!r}: categories must be nonempty and unique")


@dataclass
class Schema:
    """Column kinds and roles for a tabular dataset.

    Exactly one column has role ``sensitive`` and one has role ``decision``;
    both must be binary. For those two columns the second listed category is
    encoded as 1.
    """

    columns: list
    log_columns: list = field(default_factory=list)
    categorical_threshold: int = 5

    def __post_init__(self):
        self.columns = [c if isinstance(c, Column) else Column(**c) for c in self.columns]
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate column names in schema")
        for role in ("sensitive", "decision"):
            n = sum(c.role == role for c in self.columns)
            if n != 1:
                raise ConfigError(f"schema needs exactly one {role} column, found {n}")
        for c in self.columns:
            if c.role != "attribute":
                if c.kind != "categorical":
                    raise ConfigError(f"{c.role} column {c.name!r} must be categorical")
                if c.categories is not None and len(c.categories) != 2:
                    raise UnsupportedCardinalityError(
                        f"{c.role} column {c.name!r} has {len(c.categories)} classes; only binary is supported"
                    )
        for name in self.log_columns:
            if name not in names:
                raise ConfigError(f"log column {name!r} is not in the schema")
            if self[name].kind != "numeric":
                raise ConfigError(f"log column {name!r} must be numeric")

    def __getitem__(self, name):
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def names(self):
        return [c.name for c in self.columns]

    @property
    def sensitive(self):
        return next(c for c in self.columns if c.role == "sensitive")

    @property
    def decision(self):
        return next(c for c in self.columns if c.role == "decision")

    @property
    def attributes(self):
        return [c for c in self.columns if c.role == "attribute"]

    def to_dict(self):
        out = asdict(self)
        for col in out["columns"]:
            if col["categories"] is None:
                del col["categories"]
        return out

    @classmethod
    def from_dict(cls, doc):
        try:
            return cls(
                columns=[Column(**c) for c in doc["columns"]],
                log_columns=list(doc.get("log_columns", [])),
                categorical_threshold=int(doc.get("categorical_threshold", 5)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed schema document: {exc}") from exc

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def read_csv(path, delimiter=","):
    """Read a CSV as strings, stripping whitespace and dropping incomplete rows.

    Cells that are empty or ``?`` count as missing.
    """
    try:
        df = pd.read_csv(path, sep=delimiter, dtype=str, keep_default_na=False,
                         skipinitialspace=True, encoding="utf-8")
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot parse {path}: {exc}") from exc
    return drop_incomplete(df)


def drop_incomplete(df):
    df = df.astype(str).apply(lambda col: col.str.strip())
    df.columns = [str(c).strip() for c in df.columns]
    mask = ~df.isin(MISSING_TOKENS).any(axis=1)
    return df.loc[mask].reset_index(drop=True)


def _sorted_categories(values):
    uniq = pd.unique(pd.Series(values, dtype=str))
    try:
        return sorted(uniq, key=float)
    except ValueError:
        return sorted(uniq)


def _is_numeric(series):
    try:
        pd.to_numeric(series, errors="raise")
    except (ValueError, TypeError):
        return False
    return True


def infer_schema(df, sensitive, decision, kinds=None, log_columns=(), categorical_threshold=5):
    """Infer column kinds from the data.

    Non-numeric columns, and numeric columns with fewer than
    ``categorical_threshold`` distinct values, become categorical.
    ``kinds`` maps column names to forced kinds.
    """
    kinds = dict(kinds or {})
    if sensitive is None or decision is None:
        raise ConfigError("both a sensitive and a decision column are required")
    for name in (sensitive, decision, *kinds, *log_columns):
        if name not in df.columns:
            raise ConfigError(f"column {name!r} not found in data")
    if sensitive == decision:
        raise ConfigError("sensitive and decision columns must differ")
    columns = []
    for name in df.columns:
        series = df[name].astype(str)
        role = "sensitive" if name == sensitive else "decision" if name == decision else "attribute"
        n_distinct = series.nunique()
        if role != "attribute":
            if n_distinct != 2:
                raise UnsupportedCardinalityError(
                    f"{role} column {name!r} has {n_distinct} distinct values; only binary is supported"
                )
            kind = "categorical"
        elif name in kinds:
            kind = kinds[name]
        elif _is_numeric(series) and n_distinct >= categorical_threshold:
            kind = "numeric"
        else:
            kind = "categorical"
        categories = _sorted_categories(series) if kind == "categorical" else None
        columns.append(Column(name=name, kind=kind, role=role, categories=categories))
    return Schema(columns=columns, log_columns=list(log_columns),
                  categorical_threshold=categorical_threshold)


def coerce(df, schema):
    """Return a frame with numeric columns as float and categoricals as str."""
    missing = [name for name in schema.names if name not in df.columns]
    if missing:
        raise DataError(f"data lacks schema columns {missing}")
    out = pd.DataFrame(index=df.index)
    for col in schema.columns:
        if col.kind == "numeric":
            values = pd.to_numeric(df[col.name], errors="coerce")
            bad = values.isna() & df[col.name].notna()
            if bad.any():
                rec = bad.idxmax()
                raise DataError(
                    f"record {rec}: column {col.name!r} value {df[col.name][rec]!r} is not numeric"
                )
            out[col.name] = values.astype(np.float64)
        else:
            out[col.name] = df[col.name].astype(str)
    return out


class TabularEncoder(TransformerMixin, BaseEstimator):
    """Map records to a matrix with every entry in [0, 1], and back.

    Numeric columns are min-max scaled (after ``log1p`` for log columns),
    categorical attributes are one-hot encoded, and the decision and
    sensitive columns become single 0/1 columns. Column order of the output
    is: attributes (schema order), decision, sensitive.

    Parameters
    ----------
    schema : Schema
    clip : bool, default=True
        Clip scaled numerics into [0, 1]; values outside the fitted range
        can only occur on data the encoder was not fitted on.
    """

    def __init__(self, schema=None, clip=True):
        self.schema = schema
        self.clip = clip

    def fit(self, X, y=None):
        if self.schema is None:
            raise UsageError("TabularEncoder requires a schema")
        df = coerce(X, self.schema)
        if len(df) == 0:
            raise DataError("cannot fit an encoder on zero records")
        numeric = {}
        categories = {}
        for col in self.schema.columns:
            if col.kind == "numeric":
                values = df[col.name].to_numpy()
                use_log = col.name in self.schema.log_columns
                if use_log:
                    if (values <= -1).any():
                        raise DataError(f"log column {col.name!r} has values <= -1")
                    values = np.log1p(values)
                integer = bool(np.all(np.equal(np.mod(df[col.name].to_numpy(), 1), 0)))
                numeric[col.name] = {
                    "min": float(values.min()),
                    "max": float(values.max()),
                    "log": use_log,
                    "integer": integer,
                }
            else:
                cats = col.categories or _sorted_categories(df[col.name])
                if col.role != "attribute" and len(cats) != 2:
                    raise UnsupportedCardinalityError(
                        f"{col.role} column {col.name!r} has {len(cats)} classes"
                    )
                categories[col.name] = list(cats)
        self.numeric_ = numeric
        self.categories_ = categories
        self._build_layout()
        return self

    def _build_layout(self):
        spans = []
        names = []
        pos = 0
        ordered = self.schema.attributes + [self.schema.decision, self.schema.sensitive]
        for col in ordered:
            if col.kind == "numeric":
                width = 1
                names.append(col.name)
            elif col.role == "attribute":
                width = len(self.categories_[col.name])
                names.extend(f"{col.name}_{c}" for c in self.categories_[col.name])
            else:
                width = 1
                names.append(col.name)
            spans.append((col.name, slice(pos, pos + width)))
            pos += width
        self.spans_ = spans
        self.feature_names_out_ = np.array(names, dtype=object)
        self.n_attribute_columns_ = pos - 2
        self.decision_index_ = pos - 2
        self.sensitive_index_ = pos - 1

    @property
    def n_features_out_(self):
        return len(self.feature_names_out_)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "spans_")
        return self.feature_names_out_.copy()

    def transform(self, X):
        check_is_fitted(self, "spans_")
        df = coerce(X, self.schema)
        out = np.zeros((len(df), self.n_features_out_), dtype=np.float64)
        for name, span in self.spans_:
            col = self.schema[name]
            if col.kind == "numeric":
                meta = self.numeric_[name]
                values = df[name].to_numpy(dtype=np.float64)
                if meta["log"]:
                    values = np.log1p(values)
                width = meta["max"] - meta["min"]
                scaled = np.zeros_like(values) if width == 0 else (values - meta["min"]) / width
                if self.clip:
                    scaled = np.clip(scaled, 0.0, 1.0)
                out[:, span.start] = scaled
            else:
                cats = self.categories_[name]
                lookup = {c: i for i, c in enumerate(cats)}
                codes = df[name].map(lookup)
                if codes.isna().any():
                    rec = codes.isna().idxmax()
                    raise DataError(
                        f"record {rec}: unknown category {df[name][rec]!r} in column {name!r}"
                    )
                codes = codes.to_numpy(dtype=np.int64)
                if col.role == "attribute":
                    out[np.arange(len(df)), span.start + codes] = 1.0
                else:
                    out[:, span.start] = codes
        return out

    def inverse_transform(self, X):
        """Decode an encoded matrix back to the original attribute space.

        ``X`` may have the full layout or the sanitized layout, which lacks
        the trailing sensitive column; in the latter case the returned frame
        has no sensitive column either.
        """
        check_is_fitted(self, "spans_")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise UsageError(f"expected a 2-D matrix, got shape {X.shape}")
        full = self.n_features_out_
        if X.shape[1] not in (full, full - 1):
            raise UsageError(f"matrix has {X.shape[1]} columns; layout needs {full} or {full - 1}")
        spans = self.spans_ if X.shape[1] == full else self.spans_[:-1]
        decoded = {}
        for name, span in spans:
            col = self.schema[name]
            block = X[:, span]
            if col.kind == "numeric":
                meta = self.numeric_[name]
                values = np.clip(block[:, 0], 0.0, 1.0) * (meta["max"] - meta["min"]) + meta["min"]
                if meta["log"]:
                    values = np.expm1(values)
                if meta["integer"]:
                    values = np.round(values).astype(np.int64)
                decoded[name] = values
            else:
                cats = np.array(self.categories_[name], dtype=object)
                if col.role == "attribute":
                    # argmax returns the first maximum, so ties go to the lowest index
                    decoded[name] = cats[np.argmax(block, axis=1)]
                else:
                    decoded[name] = cats[(block[:, 0] >= 0.5).astype(np.int64)]
        order = [n for n in self.schema.names if n in decoded]
        return pd.DataFrame({n: decoded[n] for n in order})

    def to_dict(self):
        check_is_fitted(self, "spans_")
        return {
            "schema": self.schema.to_dict(),
            "clip": self.clip,
            "numeric": self.numeric_,
            "categories": self.categories_,
        }

    @classmethod
    def from_dict(cls, doc):
        enc = cls(schema=Schema.from_dict(doc["schema"]), clip=doc.get("clip", True))
        enc.numeric_ = {k: dict(v) for k, v in doc["numeric"].items()}
        enc.categories_ = {k: list(v) for k, v in doc["categories"].items()}
        enc._build_layout()
        return enc


def split_folds(n_records, k=10, seed=0):
    """Assign each record to one of ``k`` near-equal blocks after a seeded shuffle."""
    if k < 3:
        raise UsageError("at least 3 blocks are needed for train/validation/test")
    if n_records < k:
        raise UsageError(f"cannot split {n_records} records into {k} blocks")
    perm = np.random.default_rng(seed).permutation(n_records)
    blocks = np.empty(n_records, dtype=np.int64)
    for b, idx in enumerate(np.array_split(perm, k)):
        blocks[idx] = b
    return blocks


def fold_indices(blocks, fold):
    """Train/validation/test record indices for ``fold``.

    Test is block ``fold``, validation is block ``fold + 1`` (mod k), and the
    remaining blocks form the training set.
    """
    blocks = np.asarray(blocks)
    k = int(blocks.max()) + 1
    if not 0 <= fold < k:
        raise UsageError(f"fold {fold} out of range for {k} blocks")
    test = np.flatnonzero(blocks == fold)
    val = np.flatnonzero(blocks == (fold + 1) % k)
    train = np.flatnonzero((blocks != fold) & (blocks != (fold + 1) % k))
    return train, val, test

"""Exception hierarchy shared across the package."""


class SqlArenaError(Exception):
    """Base class for every error this package raises deliberately."""


# -- schema loading ----------------------------------------------------------

class IoError(SqlArenaError):
    """A schema or database file could not be read."""


class FormatError(SqlArenaError):
    """A schema description is structurally malformed."""


class UnresolvedFk(FormatError):
    """A foreign key names a table or column that does not exist."""


class UnknownTable(SqlArenaError):
    """A table name does not resolve in the schema."""


class UnknownDatabase(SqlArenaError):
    """A db_id has no registered database handle."""


# -- execution ---------------------------------------------------------------

class SqlSyntaxError(SqlArenaError):
    """The engine rejected the statement as unparseable."""


class SqlRuntimeError(SqlArenaError):
    """The statement parsed but failed during execution."""


class SqlTimeout(SqlArenaError):
    """Execution exceeded the configured time budget."""


class WriteRejected(SqlArenaError):
    """The statement is not a single read-only SELECT."""


class GoldExecFailed(SqlArenaError):
    """A gold query failed to execute; callers must validate gold first."""


class EmptyInput(SqlArenaError):
    """An operation that needs at least one item received none."""


# -- template extraction -----------------------------------------------------

class ParseError(SqlArenaError):
    """SQL text does not conform to the supported SELECT grammar."""


class UnsupportedStatement(ParseError):
    """The statement is parseable but not a plain SELECT."""


class UnresolvedColumn(SqlArenaError):
    """A column or table reference does not resolve in the schema."""


class AllItemsFailed(SqlArenaError):
    """No corpus item yielded a template."""


class EmptyPool(SqlArenaError):
    """The template pool has no templates to sample from."""


# -- synthesis ---------------------------------------------------------------

class NoCompatibleColumn(SqlArenaError):
    """A template slot has no schema column of the required type."""


class ExhaustedCandidates(SqlArenaError):
    """The distinct-column constraint left a slot with no candidates."""


class NoValuesAvailable(SqlArenaError):
    """A value slot's column holds no non-null values to sample."""


class DisconnectedTables(SqlArenaError):
    """Bound tables span multiple foreign-key components."""


class InstantiationFailed(SqlArenaError):
    """All retries at instantiating a template were exhausted."""


class SynthesisStalled(SqlArenaError):
    """The requested dataset size is unreachable within the attempt budget."""


# -- toy policies ------------------------------------------------------------

class UnknownQuestion(SqlArenaError):
    """The question key is absent from the candidate space."""


class UnknownCandidate(SqlArenaError):
    """The SQL text is not one of the question's candidates."""

/**
 * Raised when an input file does not carry the schema a figure needs:
 * a missing column or field (named in the message), a value that does
 * not parse, or a table with no usable rows.
 */
export class SchemaError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "SchemaError";
  }
}

export const PROTOCOL_VERSION = 1;
export const RUNNER_VERSION = "1.0.0";

export const MIN_TIME_LIMIT_MS = 100;
export const MAX_TIME_LIMIT_MS = 60_000;
export const DEFAULT_TIME_LIMIT_MS = 2_000;
export const OUTPUT_TRUNCATE_BYTES = 8_192;

export type TestMode = "stdin_stdout" | "assertion";
export type Comparison = "exact" | "normalized";
export type TestStatus = "pass" | "fail" | "error" | "timeout";

export interface TestSpec {
  id: string;
  mode: TestMode;
  input: string;
  expectedOutput: string;
  timeLimitMs: number;
}

export interface RunnerRequest {
  solutionSource: string;
  tests: TestSpec[];
  comparison: Comparison;
}

export interface TestResult {
  test_id: string;
  status: TestStatus;
  stdout: string;
  stderr: string;
  duration_ms: number;
}

export interface RunnerResponse {
  results: TestResult[];
  runner_version: string;
}

/** Request rejected before any test ran; never used for a test outcome. */
export class MalformedRequestError extends Error {}

function fail(detail: string): never {
  throw new MalformedRequestError(detail);
}

function asString(value: unknown, where: string): string {
  if (typeof value !== "string") fail(`${where} must be a string`);
  return value;
}

function checkLimit(value: unknown, where: string): number {
  if (typeof value !== "number" || !Number.isInteger(value)) {
    fail(`${where} must be an integer`);
  }
  if (value < MIN_TIME_LIMIT_MS || value > MAX_TIME_LIMIT_MS) {
    fail(`${where} ${value} outside [${MIN_TIME_LIMIT_MS}, ${MAX_TIME_LIMIT_MS}]`);
  }
  return value;
}

function parseTest(raw: unknown, index: number, defaultLimitMs: number): TestSpec {
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    fail(`tests[${index}] must be an object`);
  }
  const rec = raw as Record<string, unknown>;
  const id = asString(rec["id"], `tests[${index}].id`);
  if (id === "") fail(`tests[${index}].id must be non-empty`);
  const mode = rec["mode"] ?? "stdin_stdout";
  if (mode !== "stdin_stdout" && mode !== "assertion") {
    fail(`tests[${index}].mode must be stdin_stdout or assertion`);
  }
  const input = rec["input"] === undefined ? "" : asString(rec["input"], `tests[${index}].input`);
  const expectedOutput =
    rec["expected_output"] === undefined || rec["expected_output"] === null
      ? ""
      : asString(rec["expected_output"], `tests[${index}].expected_output`);
  if (mode === "assertion" && input.trim() === "") {
    fail(`tests[${index}] assertion mode requires assertion source in input`);
  }
  const timeLimitMs =
    rec["time_limit_ms"] === undefined || rec["time_limit_ms"] === null
      ? defaultLimitMs
      : checkLimit(rec["time_limit_ms"], `tests[${index}].time_limit_ms`);
  return { id, mode, input, expectedOutput, timeLimitMs };
}

/** Parse one request line; throws MalformedRequestError on any violation. */
export function parseRequest(line: string): RunnerRequest {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch (exc) {
    fail(`request is not JSON: ${(exc as Error).message}`);
  }
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    fail("request must be a JSON object");
  }
  const rec = raw as Record<string, unknown>;
  const solutionSource = asString(rec["solution_source"], "solution_source");
  const defaultLimitMs =
    rec["time_limit_ms"] === undefined || rec["time_limit_ms"] === null
      ? DEFAULT_TIME_LIMIT_MS
      : checkLimit(rec["time_limit_ms"], "time_limit_ms");
  const comparison = rec["comparison"] ?? "normalized";
  if (comparison !== "exact" && comparison !== "normalized") {
    fail("comparison must be exact or normalized");
  }
  const testsRaw = rec["tests"];
  if (!Array.isArray(testsRaw) || testsRaw.length === 0) {
    fail("tests must be a non-empty array");
  }
  const tests = testsRaw.map((t, i) => parseTest(t, i, defaultLimitMs));
  return { solutionSource, tests, comparison };
}

/** Strip trailing whitespace from each line and trailing blank lines. */
export function normalizeOutput(text: string): string {
  const lines = text.split("\n").map((line) => line.replace(/\s+$/u, ""));
  while (lines.length > 0 && lines[lines.length - 1] === "") {
    lines.pop();
  }
  return lines.join("\n");
}

export function outputsMatch(actual: string, expected: string, comparison: Comparison): boolean {
  if (comparison === "exact") {
    return actual === expected;
  }
  return normalizeOutput(actual) === normalizeOutput(expected);
}

/** Cap text at maxBytes of UTF-8 without splitting a code point. */
export function truncateUtf8(text: string, maxBytes: number = OUTPUT_TRUNCATE_BYTES): string {
  const buf = Buffer.from(text, "utf8");
  if (buf.length <= maxBytes) {
    return text;
  }
  let end = maxBytes;
  // 0b10xxxxxx bytes continue a multi-byte sequence; never cut before one
  while (end > 0 && (buf[end]! & 0xc0) === 0x80) {
    end -= 1;
  }
  return buf.subarray(0, end).toString("utf8");
}

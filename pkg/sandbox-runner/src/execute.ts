import { spawn } from "node:child_process";
import { mkdtemp, rm, writeFile } from "node:fs/promises";
import { tmpdir } from "node:os";
import path from "node:path";
import { performance } from "node:perf_hooks";

import {
  Comparison,
  TestResult,
  TestSpec,
  outputsMatch,
  truncateUtf8,
} from "./protocol.js";

// Collection cap per stream; comparison sees at most this much, the
// response is truncated further to the protocol's 8 KiB.
const COLLECT_CAP_BYTES = 4 * 1024 * 1024;

const PYTHON = process.env["SANDBOX_PYTHON"] ?? "python3";

interface ChildOutcome {
  exitCode: number | null;
  stdout: string;
  stderr: string;
  durationMs: number;
  timedOut: boolean;
}

function collectStream(
  stream: NodeJS.ReadableStream,
  chunks: Buffer[],
  size: { bytes: number },
): void {
  stream.on("data", (chunk: Buffer) => {
    if (size.bytes < COLLECT_CAP_BYTES) {
      chunks.push(chunk);
      size.bytes += chunk.length;
    }
  });
}

function runChild(scriptPath: string, cwd: string, stdin: string, limitMs: number): Promise<ChildOutcome> {
  return new Promise((resolve, reject) => {
    const start = performance.now();
    const child = spawn(PYTHON, ["-I", scriptPath], {
      cwd,
      stdio: ["pipe", "pipe", "pipe"],
    });
    const out: Buffer[] = [];
    const err: Buffer[] = [];
    const outSize = { bytes: 0 };
    const errSize = { bytes: 0 };
    let timedOut = false;

    collectStream(child.stdout, out, outSize);
    collectStream(child.stderr, err, errSize);

    const timer = setTimeout(() => {
      timedOut = true;
      child.kill("SIGKILL");
    }, limitMs);

    // The child may exit without reading stdin; EPIPE here is not an error.
    child.stdin.on("error", () => {});
    child.stdin.write(stdin);
    child.stdin.end();

    child.on("error", (exc) => {
      clearTimeout(timer);
      reject(exc);
    });
    child.on("close", (code) => {
      clearTimeout(timer);
      resolve({
        exitCode: code,
        stdout: Buffer.concat(out).toString("utf8"),
        stderr: Buffer.concat(err).toString("utf8"),
        durationMs: Math.round(performance.now() - start),
        timedOut,
      });
    });
  });
}

function composeScript(solutionSource: string, test: TestSpec): string {
  if (test.mode === "assertion") {
    return `${solutionSource}\n\n${test.input}\n`;
  }
  return solutionSource;
}

function statusFor(test: TestSpec, comparison: Comparison, outcome: ChildOutcome): TestResult["status"] {
  if (outcome.timedOut) {
    return "timeout";
  }
  if (test.mode === "assertion") {
    if (outcome.exitCode === 0) {
      return "pass";
    }
    return outcome.stderr.includes("AssertionError") ? "fail" : "error";
  }
  if (outcome.exitCode !== 0) {
    return "error";
  }
  return outputsMatch(outcome.stdout, test.expectedOutput, comparison) ? "pass" : "fail";
}

/** Run one test in a fresh interpreter inside a fresh temp directory. */
export async function runTest(
  solutionSource: string,
  test: TestSpec,
  comparison: Comparison,
): Promise<TestResult> {
  let workDir: string | null = null;
  try {
    workDir = await mkdtemp(path.join(tmpdir(), "sandbox-"));
    const scriptPath = path.join(workDir, "main.py");
    await writeFile(scriptPath, composeScript(solutionSource, test), "utf8");
    const stdin = test.mode === "stdin_stdout" ? test.input : "";
    const outcome = await runChild(scriptPath, workDir, stdin, test.timeLimitMs);
    return {
      test_id: test.id,
      status: statusFor(test, comparison, outcome),
      stdout: truncateUtf8(outcome.stdout),
      stderr: truncateUtf8(outcome.stderr),
      duration_ms: outcome.durationMs,
    };
  } catch (exc) {
    // Infrastructure failures are a test error, never a protocol error.
    return {
      test_id: test.id,
      status: "error",
      stdout: "",
      stderr: truncateUtf8(`runner failure: ${(exc as Error).message}`),
      duration_ms: 0,
    };
  } finally {
    if (workDir !== null) {
      await rm(workDir, { recursive: true, force: true }).catch(() => {});
    }
  }
}

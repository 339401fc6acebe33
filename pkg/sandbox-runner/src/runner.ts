import { createInterface } from "node:readline";

import { runTest } from "./execute.js";
import {
  MalformedRequestError,
  PROTOCOL_VERSION,
  RUNNER_VERSION,
  RunnerResponse,
  parseRequest,
} from "./protocol.js";

function writeLine(payload: unknown): void {
  process.stdout.write(JSON.stringify(payload) + "\n");
}

async function handleLine(line: string): Promise<void> {
  let request;
  try {
    request = parseRequest(line);
  } catch (exc) {
    const detail = exc instanceof MalformedRequestError ? exc.message : String(exc);
    writeLine({ error: "malformed_request", detail });
    return;
  }
  const response: RunnerResponse = { results: [], runner_version: RUNNER_VERSION };
  for (const test of request.tests) {
    response.results.push(await runTest(request.solutionSource, test, request.comparison));
  }
  writeLine(response);
}

async function main(): Promise<void> {
  writeLine({ runner_version: RUNNER_VERSION, protocol_version: PROTOCOL_VERSION });
  const lines = createInterface({ input: process.stdin, crlfDelay: Infinity });
  for await (const line of lines) {
    if (line.trim() === "") {
      continue;
    }
    await handleLine(line);
  }
}

main().catch((exc) => {
  process.stderr.write(`fatal: ${exc}\n`);
  process.exit(1);
});

/** HTTP/SSE client for the generation service.
 *
 * The fetch implementation is injectable so tests can run against a mock
 * service; only standard Response / ReadableStream behaviour is assumed.
 */
import type {
  GenerateOptions,
  GenerateResponse,
  LayoutDoc,
  ServiceError,
  TrajectoryStep,
} from "./types.js";

export type FetchLike = (url: string, init: RequestInit) => Promise<Response>;

export class ServiceRequestError extends Error {
  readonly code: string;
  readonly path?: string;
  readonly status: number;

  constructor(status: number, body: ServiceError | null, fallback: string) {
    const message = body?.error?.message ?? fallback;
    super(body?.error?.path ? `${body.error.path}: ${message}` : message);
    this.status = status;
    this.code = body?.error?.code ?? "unknown";
    this.path = body?.error?.path;
  }
}

async function errorFrom(resp: Response): Promise<ServiceRequestError> {
  let body: ServiceError | null = null;
  try {
    body = (await resp.json()) as ServiceError;
  } catch {
    body = null;
  }
  return new ServiceRequestError(resp.status, body, `service returned ${resp.status}`);
}

export async function generate(
  baseUrl: string,
  layout: LayoutDoc,
  options: GenerateOptions,
  fetchImpl: FetchLike = fetch,
): Promise<GenerateResponse> {
  const resp = await fetchImpl(`${baseUrl}/v1/generate`, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify({ layout, options }),
  });
  if (!resp.ok) throw await errorFrom(resp);
  return (await resp.json()) as GenerateResponse;
}

/** Incremental parser for `data: <json>` server-sent events across chunk
 * boundaries. */
export class SseParser {
  private buffer = "";

  push(chunk: string): unknown[] {
    this.buffer += chunk;
    const events: unknown[] = [];
    let sep: number;
    while ((sep = this.buffer.indexOf("\n\n")) >= 0) {
      const block = this.buffer.slice(0, sep);
      this.buffer = this.buffer.slice(sep + 2);
      for (const line of block.split("\n")) {
        if (line.startsWith("data: ")) {
          events.push(JSON.parse(line.slice("data: ".length)));
        }
      }
    }
    return events;
  }
}

export interface StreamResult {
  final: LayoutDoc;
  steps: TrajectoryStep[];
}

export async function generateStream(
  baseUrl: string,
  layout: LayoutDoc,
  options: GenerateOptions,
  onStep?: (step: TrajectoryStep) => void,
  fetchImpl: FetchLike = fetch,
): Promise<StreamResult> {
  const resp = await fetchImpl(`${baseUrl}/v1/generate/stream`, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify({ layout, options }),
  });
  if (!resp.ok) throw await errorFrom(resp);
  if (!resp.body) throw new ServiceRequestError(resp.status, null, "response has no body");

  const reader = resp.body.getReader();
  const decoder = new TextDecoder();
  const parser = new SseParser();
  const steps: TrajectoryStep[] = [];
  let final: LayoutDoc | null = null;

  const handle = (event: unknown) => {
    const e = event as Record<string, unknown>;
    if (e["error"]) {
      const err = e["error"] as ServiceError["error"];
      throw new ServiceRequestError(200, { error: err }, err.message);
    }
    if (e["done"]) {
      final = e["layout"] as LayoutDoc;
      return;
    }
    const step = e as unknown as TrajectoryStep;
    steps.push(step);
    onStep?.(step);
  };

  for (;;) {
    const { value, done } = await reader.read();
    if (done) break;
    for (const event of parser.push(decoder.decode(value, { stream: true }))) {
      handle(event);
    }
  }
  for (const event of parser.push(decoder.decode())) handle(event);
  if (!final) {
    throw new ServiceRequestError(200, null, "stream ended without a terminal event");
  }
  return { final, steps };
}

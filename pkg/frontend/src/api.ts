/** REST client for the annotation service. All geometry (markers, projected
 * boxes) comes from these endpoints; the client performs no projection math. */

import type {
  BoxDoc,
  DraftBox,
  IdentityDoc,
  IdentityLink,
  ScenesResponse,
  SessionView,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
    public detail?: unknown,
  ) {
    super(message);
  }
}

/** 409: someone else changed the document since we read it. */
export class ConflictError extends ApiError {
  constructor(status: number, code: string, message: string, detail?: unknown) {
    super(status, code, message, detail);
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

async function parseError(res: Response): Promise<ApiError> {
  let code = "UnknownError";
  let message = `HTTP ${res.status}`;
  let detail: unknown;
  try {
    const body = (await res.json()) as {
      code?: string;
      message?: string;
      detail?: unknown;
    };
    code = body.code ?? code;
    message = body.message ?? message;
    detail = body.detail;
  } catch {
    // non-JSON error body; keep the defaults
  }
  const cls = res.status === 409 ? ConflictError : ApiError;
  return new cls(res.status, code, message, detail);
}

export class AnnotationApi {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchImpl(this.baseUrl + path, init);
    if (!res.ok) {
      throw await parseError(res);
    }
    return (await res.json()) as T;
  }

  private post<T>(path: string, body: unknown, method = "POST"): Promise<T> {
    return this.request<T>(path, {
      method,
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  health(): Promise<{ status: string; images: number }> {
    return this.request("/health");
  }

  scenes(): Promise<ScenesResponse> {
    return this.request("/scenes");
  }

  selectTarget(lat: number, lng: number): Promise<SessionView> {
    return this.post("/session/select", { lat, lng });
  }

  createBox(imageId: string, box: DraftBox, author: string): Promise<BoxDoc> {
    return this.post(`/images/${encodeURIComponent(imageId)}/boxes`, {
      ...box,
      author,
    });
  }

  updateBox(
    imageId: string,
    boxId: string,
    box: DraftBox,
    author: string,
    expectedRevision: number,
  ): Promise<BoxDoc> {
    return this.post(
      `/images/${encodeURIComponent(imageId)}/boxes/${encodeURIComponent(boxId)}`,
      { ...box, author, expected_revision: expectedRevision },
      "PUT",
    );
  }

  saveIdentity(payload: {
    instance_id?: string;
    geo: { lat: number; lng: number };
    links: IdentityLink[];
    status?: string;
  }): Promise<IdentityDoc> {
    return this.post("/identities", payload);
  }

  getIdentity(instanceId: string): Promise<IdentityDoc> {
    return this.request(`/identities/${encodeURIComponent(instanceId)}`);
  }

  imageUrl(imageId: string): string {
    return `${this.baseUrl}/images/${encodeURIComponent(imageId)}`;
  }

  exportUrl(format: "voc" | "json"): string {
    return `${this.baseUrl}/export?format=${format}`;
  }
}

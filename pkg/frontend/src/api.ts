// Typed client for the segmentation feedback service. The endpoint set is
// fixed; every view in the app is reconstructable from these GETs.

export type Verdict = "Adequate" | "Inadequate";
export type Axis = "d" | "h" | "w";

export interface StudyStatus {
  study: string;
  dims: [number, number, number];
  prediction: string | null;
  model_version: number | null;
  verdict: Verdict | null;
}

export interface FeedbackSummary {
  adequate: number;
  inadequate: number;
  unrated: number;
  studies: StudyStatus[];
}

export interface SliceParams {
  axis: Axis;
  index: number;
  modality: string;
  overlay: boolean;
}

export function sliceUrl(base: string, studyId: string, p: SliceParams): string {
  const q = new URLSearchParams({
    axis: p.axis,
    index: String(p.index),
    modality: p.modality,
    overlay: p.overlay ? "1" : "0",
  });
  return `${base}/studies/${encodeURIComponent(studyId)}/slice?${q.toString()}`;
}

export class ApiClient {
  constructor(private base: string, private fetchFn: typeof fetch = fetch) {}

  async summary(): Promise<FeedbackSummary> {
    const res = await this.fetchFn(`${this.base}/feedback/summary`);
    if (!res.ok) throw new Error(`summary failed: ${res.status}`);
    return (await res.json()) as FeedbackSummary;
  }

  async modelInfo(): Promise<{ version: number; param_count: number }> {
    const res = await this.fetchFn(`${this.base}/model/info`);
    if (!res.ok) throw new Error(`model info failed: ${res.status}`);
    return await res.json();
  }

  async submitRating(studyId: string, verdict: Verdict, rater: string): Promise<void> {
    const res = await this.fetchFn(
      `${this.base}/studies/${encodeURIComponent(studyId)}/rating`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ verdict, rater }),
      },
    );
    if (res.status !== 204) {
      const detail = await res.text().catch(() => "");
      throw new Error(`rating rejected (${res.status}): ${detail}`);
    }
  }

  async requestSegmentation(studyId: string): Promise<string> {
    const res = await this.fetchFn(
      `${this.base}/studies/${encodeURIComponent(studyId)}/segment`,
      { method: "POST" },
    );
    if (!res.ok) throw new Error(`segment request failed: ${res.status}`);
    return (await res.json()).job_id as string;
  }

  async jobState(jobId: string): Promise<{ state: string; error: string | null }> {
    const res = await this.fetchFn(`${this.base}/jobs/${jobId}`);
    if (!res.ok) throw new Error(`job lookup failed: ${res.status}`);
    return await res.json();
  }

  slice(studyId: string, p: SliceParams): string {
    return sliceUrl(this.base, studyId, p);
  }
}

/** Runtime configuration, loaded from config.json next to index.html. */

export interface AppConfig {
  apiBaseUrl: string;
  /** Optional static-map image URL template with {lat}/{lng}/{w}/{h}
   * placeholders; the schematic plan view is used when absent. */
  staticMapUrlTemplate: string | null;
  author: string;
}

const DEFAULTS: AppConfig = {
  apiBaseUrl: "http://127.0.0.1:8000",
  staticMapUrlTemplate: null,
  author: "annotator",
};

export async function loadConfig(url = "config.json"): Promise<AppConfig> {
  try {
    const res = await fetch(url);
    if (!res.ok) {
      return DEFAULTS;
    }
    return { ...DEFAULTS, ...((await res.json()) as Partial<AppConfig>) };
  } catch {
    return DEFAULTS;
  }
}

/** Wire types mirrored from the annotation service API. */

export interface GeoPoint {
  lat: number;
  lng: number;
}

export interface PixelMarker {
  x: number;
  y: number;
}

export interface Proposal {
  local_id: number;
  box: [number, number, number, number];
  label: string;
  score: number;
}

export interface PaneView {
  image_id: string;
  width: number;
  height: number;
  /** Server-computed guidance marker; the client never derives this. */
  marker: PixelMarker | null;
  marker_radius_px: number;
  proposals: Proposal[];
}

export interface SessionView {
  target: GeoPoint;
  panoramas: PaneView[];
  short: boolean;
}

export interface BoxDoc {
  box_id: string;
  x_min: number;
  y_min: number;
  x_max: number;
  y_max: number;
  label: string;
  author: string;
  revision: number;
}

export interface IdentityLink {
  image_id: string;
  box_id: string;
}

export interface IdentityDoc {
  instance_id: string;
  geo: GeoPoint;
  links: IdentityLink[];
  status: string;
  revision: number;
}

export interface SceneImage {
  image_id: string;
  lat: number;
  lng: number;
  yaw_deg: number;
  width: number;
  height: number;
  n_boxes: number;
}

export interface ScenesResponse {
  images: SceneImage[];
  identities: string[];
}

export interface DraftBox {
  x_min: number;
  y_min: number;
  x_max: number;
  y_max: number;
  label: string;
}

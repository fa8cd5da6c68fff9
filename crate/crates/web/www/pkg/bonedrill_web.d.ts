/* tslint:disable */
/* eslint-disable */

/**
 * Detector result plus an RGBA view of the cropped residual depth.
 */
export class DeflectionView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    json(): string;
    rgba(): Uint8Array;
    readonly height: number;
    readonly width: number;
}

export function deflection(displacement_mm: number, depth_sigma: number, threshold_mm: number, seed: number): DeflectionView;

export function spline(z: Float64Array, samples: number): string;

export function trial(seed: number, observer_bias: number, springback_max: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_deflectionview_free: (a: number, b: number) => void;
    readonly deflection: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly deflectionview_height: (a: number) => number;
    readonly deflectionview_json: (a: number) => [number, number];
    readonly deflectionview_rgba: (a: number) => [number, number];
    readonly deflectionview_width: (a: number) => number;
    readonly spline: (a: number, b: number, c: number) => [number, number, number, number];
    readonly trial: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
